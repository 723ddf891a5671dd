#include "ldc/zeroshot.hpp"

#include "ldc/error.hpp"
#include "ldc/nn.hpp"

#include <algorithm>
#include <cmath>

namespace ldc {

double cosine_sim(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) {
        throw ShapeError("cosine_sim: length " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
    }
    const double nu = l2_norm(u);
    const double nv = l2_norm(v);
    if (nu == 0.0 || nv == 0.0) throw DegenerateVectorError("cosine_sim: zero-norm vector");
    return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

ZeroShotScores zs_logits(std::span<const double> image_emb, const Matrix& texts, double temperature,
                         std::span<const std::string> class_names) {
    if (!(temperature > 0.0)) throw ConfigError("zs_logits: temperature must be positive");
    if (texts.cols() != image_emb.size()) {
        throw ShapeError("zs_logits: image embedding dim " + std::to_string(image_emb.size()) +
                         ", text embedding dim " + std::to_string(texts.cols()));
    }
    ZeroShotScores out;
    out.similarities.resize(texts.rows());
    for (std::size_t c = 0; c < texts.rows(); ++c) {
        try {
            out.similarities[c] = cosine_sim(image_emb, texts.row(c));
        } catch (const DegenerateVectorError& e) {
            const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
            throw DegenerateVectorError(std::string(e.what()) + " (class '" + name + "')");
        }
    }
    Vector scaled(out.similarities);
    for (double& s : scaled) s *= temperature;
    out.logits = nn::softmax(scaled);
    return out;
}

}  // namespace ldc
