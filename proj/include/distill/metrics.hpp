#pragma once

#include <cstddef>
#include <vector>

#include "distill/tensor.hpp"

namespace distill {

/// Fraction of masked nodes whose arg-max logit is the true label. Ties go
/// to the lowest class index. Throws ContractError on an empty mask.
double evaluate(const Tensor& logits, const std::vector<int>& labels, const std::vector<bool>& mask);

/// Arg-max per row, lowest index on ties.
std::vector<std::size_t> predict(const Tensor& logits);

}  // namespace distill
