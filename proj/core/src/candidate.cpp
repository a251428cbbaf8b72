#include "drsr/candidate.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <stdexcept>

namespace drsr {

std::string_view to_string(Category c) noexcept {
    switch (c) {
        case Category::positive: return "positive";
        case Category::negative: return "negative";
        case Category::invalid: return "invalid";
    }
    return "?";
}

Category category_from_string(std::string_view s) {
    std::string lower(s);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    for (auto c : {Category::positive, Category::negative, Category::invalid})
        if (to_string(c) == lower) return c;
    throw std::invalid_argument("unknown category '" + std::string(s) + "'");
}

double Candidate::score() const noexcept {
    return fit ? fit->score : -std::numeric_limits<double>::infinity();
}

}  // namespace drsr
