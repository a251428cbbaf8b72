#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "drsr/expr.hpp"
#include "drsr/fit.hpp"

namespace drsr {

enum class Category : std::uint8_t { positive, negative, invalid };

[[nodiscard]] std::string_view to_string(Category c) noexcept;
/// Accepts "positive" / "negative" / "invalid" (any case). Throws std::invalid_argument.
[[nodiscard]] Category category_from_string(std::string_view s);

/// One sampled equation and what became of it.
struct Candidate {
    std::string raw_completion;
    /// Expression text taken from the completion (empty if none was found).
    std::string extracted;
    std::optional<expr::Expression> expression;
    std::optional<fit::FitResult> fit;
    /// Parse or evaluation error, set iff the candidate is invalid.
    std::string error;
    Category category = Category::invalid;
    std::size_t iteration = 0;
    /// Position in the iteration's batch of completions.
    std::size_t index = 0;

    [[nodiscard]] bool valid() const noexcept { return expression.has_value() && fit.has_value(); }
    [[nodiscard]] double score() const noexcept;
};

}  // namespace drsr
