#include "distill/metrics.hpp"

#include "distill/error.hpp"

namespace distill {

std::vector<std::size_t> predict(const Tensor& logits) {
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j)
      if (row[j] > row[best]) best = j;
    out[i] = best;
  }
  return out;
}

double evaluate(const Tensor& logits, const std::vector<int>& labels, const std::vector<bool>& mask) {
  if (labels.size() != logits.rows() || mask.size() != logits.rows()) {
    throw DimensionError("evaluate: labels/mask length must equal logit rows");
  }
  const auto pred = predict(logits);
  std::size_t total = 0, correct = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    ++total;
    if (labels[i] >= 0 && pred[i] == static_cast<std::size_t>(labels[i])) ++correct;
  }
  if (total == 0) throw ContractError("evaluate: empty mask");
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace distill
