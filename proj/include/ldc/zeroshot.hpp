#pragma once

#include "ldc/tensor.hpp"

#include <span>
#include <string>
#include <vector>

namespace ldc {

struct ZeroShotScores {
    Vector similarities;  // raw cosine per class, in [-1, 1]
    Vector logits;        // softmax(temperature * similarities)
};

// Throws DegenerateVectorError on a zero-norm input.
double cosine_sim(std::span<const double> u, std::span<const double> v);

// `texts` holds one embedding per class (row c = class c). `class_names` is
// optional and only used to name the class in error messages.
ZeroShotScores zs_logits(std::span<const double> image_emb, const Matrix& texts, double temperature,
                         std::span<const std::string> class_names = {});

}  // namespace ldc
