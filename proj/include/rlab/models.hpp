#pragma once

#include <string>

#include "rlab/error.hpp"

namespace rlab {

/// Model id and decoding parameters for one call purpose.
struct ModelCall {
    std::string model;
    double temperature = 0.0;
    double top_p = 1.0;
    int max_tokens = 512;

    void validate(const std::string& field) const {
        if (model.empty()) throw ConfigError(field + ".model", "must not be empty");
        if (!(temperature >= 0.0 && temperature <= 2.0)) throw ConfigError(field + ".temperature", "must lie in [0, 2]");
        if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError(field + ".top_p", "must lie in (0, 1]");
        if (max_tokens < 1) throw ConfigError(field + ".max_tokens", "must be >= 1");
    }
};

/// Per-purpose model settings. Tagging, rewriting and judging share one
/// snapshot; answering uses another.
struct ModelSettings {
    ModelCall tagger{"gpt-4o-2024-11-20", 0.0, 1.0, 512};
    ModelCall rewriter{"gpt-4o-2024-11-20", 0.2, 1.0, 512};
    ModelCall answerer{"gpt-4o-2024-08-06", 0.2, 1.0, 512};
    ModelCall judge{"gpt-4o-2024-11-20", 0.0, 1.0, 16};
    ModelCall perturber{"gpt-4o-2024-11-20", 0.7, 1.0, 1024};

    void validate() const {
        tagger.validate("models.tagger");
        rewriter.validate("models.rewriter");
        answerer.validate("models.answerer");
        judge.validate("models.judge");
        perturber.validate("models.perturber");
    }
};

} // namespace rlab
