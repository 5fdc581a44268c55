#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace sgsd {

// Text embedding backend used for skill retrieval.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<double> embed(std::string_view text) const = 0;
};

// Character n-gram feature hashing into a fixed-width, L2-normalized vector.
// Text is lower-cased and padded with one space on each side first.
class HashingEmbedder final : public Embedder {
 public:
  explicit HashingEmbedder(std::size_t dim = 512, std::size_t ngram = 3);

  std::vector<double> embed(std::string_view text) const override;

  std::size_t dim() const noexcept { return dim_; }

 private:
  std::size_t dim_;
  std::size_t ngram_;
};

// Cosine similarity; 0 when either vector is all zero.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace sgsd
