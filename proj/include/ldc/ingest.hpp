#pragma once

#include "ldc/bundle.hpp"

#include <json.hpp>

#include <filesystem>

namespace ldc {

// Plain-JSON interchange form of a bundle, for producing bundles from external
// feature extractors:
//
//   {
//     "class_names": ["cat", "dog"],
//     "temperature": 100,                      (optional)
//     "metadata": {...},                       (optional)
//     "text_embeddings": [[...], [...]],       one row per class
//     "projector": "identity" | {"weight": [[...]] (in x out), "bias": [...]},
//     "records": [
//       {"id": "img0", "label": 0, "levels": [[...], [...], [...], [...]],
//        "embedding": [...], "test": false}      (embedding and test optional)
//     ]
//   }
//
// Level and embedding dims are inferred from the data. The projector defaults
// to the identity when omitted.
FeatureBundle bundle_from_json(const nlohmann::json& j);
nlohmann::json bundle_to_json(const FeatureBundle& bundle);

FeatureBundle ingest_json_file(const std::filesystem::path& path);

// Counts and dims for quick inspection.
nlohmann::json bundle_summary(const FeatureBundle& bundle);

}  // namespace ldc
