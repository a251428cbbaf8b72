#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace drsr::prompts {

/// Named prompt templates. Placeholders are written `{{name}}`.
///
/// Known names: main, insight_initial, insight_refine, task_requirements,
/// idea_positive, idea_negative, idea_invalid.
class TemplateSet {
public:
    /// Templates compiled into the library.
    static TemplateSet defaults();

    /// Defaults overridden by every `<name>.txt` found in `dir`. Throws
    /// std::runtime_error if `dir` does not exist.
    static TemplateSet from_directory(const std::filesystem::path& dir);

    /// Throws std::out_of_range for an unknown name.
    [[nodiscard]] const std::string& get(std::string_view name) const;

    void set(std::string name, std::string text) { texts_[std::move(name)] = std::move(text); }

    [[nodiscard]] const std::map<std::string, std::string, std::less<>>& all() const noexcept { return texts_; }

private:
    std::map<std::string, std::string, std::less<>> texts_;
};

using Values = std::map<std::string, std::string, std::less<>>;

/// Substitutes every `{{name}}` in `tmpl`. Substituted text is not rescanned.
/// Throws std::invalid_argument for a placeholder without a value or an
/// unterminated `{{`.
[[nodiscard]] std::string render(std::string_view tmpl, const Values& values);

}  // namespace drsr::prompts
