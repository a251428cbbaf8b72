#pragma once

#include <span>
#include <string_view>

namespace drsr::resources {

struct EmbeddedTemplate {
    std::string_view name;
    std::string_view text;
};

std::string_view grammar_ebnf() noexcept;
std::span<const EmbeddedTemplate> default_templates() noexcept;

}  // namespace drsr::resources
