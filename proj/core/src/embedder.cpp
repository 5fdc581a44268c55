#include "sgsd/embedder.hpp"

#include <cctype>
#include <cmath>
#include <stdexcept>
#include <string>

#include "sgsd/hash.hpp"

namespace sgsd {

HashingEmbedder::HashingEmbedder(std::size_t dim, std::size_t ngram) : dim_(dim), ngram_(ngram) {
  if (dim_ == 0 || ngram_ == 0) throw std::invalid_argument("HashingEmbedder: dim and ngram must be > 0");
}

std::vector<double> HashingEmbedder::embed(std::string_view text) const {
  std::string padded = " ";
  for (unsigned char c : text) padded.push_back(static_cast<char>(std::tolower(c)));
  padded.push_back(' ');

  std::vector<double> v(dim_, 0.0);
  if (padded.size() < ngram_) return v;
  for (std::size_t i = 0; i + ngram_ <= padded.size(); ++i) {
    const auto gram = std::string_view(padded).substr(i, ngram_);
    v[fnv1a(gram) % dim_] += 1.0;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (double& x : v) x /= norm;
  }
  return v;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: dimension mismatch");
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace sgsd
