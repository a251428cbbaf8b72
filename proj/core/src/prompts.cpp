#include "drsr/prompts.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "resources.hpp"

namespace drsr::prompts {

TemplateSet TemplateSet::defaults() {
    TemplateSet set;
    for (const auto& t : resources::default_templates()) set.texts_.emplace(std::string(t.name), std::string(t.text));
    return set;
}

TemplateSet TemplateSet::from_directory(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw std::runtime_error("prompt directory not found: " + dir.string());
    TemplateSet set = defaults();
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
        std::ifstream in(entry.path(), std::ios::binary);
        std::ostringstream buf;
        buf << in.rdbuf();
        set.texts_[entry.path().stem().string()] = buf.str();
    }
    return set;
}

const std::string& TemplateSet::get(std::string_view name) const {
    auto it = texts_.find(name);
    if (it == texts_.end()) throw std::out_of_range("unknown prompt template '" + std::string(name) + "'");
    return it->second;
}

std::string render(std::string_view tmpl, const Values& values) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        const auto open = tmpl.find("{{", pos);
        if (open == std::string_view::npos) {
            out.append(tmpl.substr(pos));
            break;
        }
        out.append(tmpl.substr(pos, open - pos));
        const auto close = tmpl.find("}}", open + 2);
        if (close == std::string_view::npos)
            throw std::invalid_argument("unterminated placeholder at offset " + std::to_string(open));
        const auto name = tmpl.substr(open + 2, close - open - 2);
        auto it = values.find(name);
        if (it == values.end()) throw std::invalid_argument("no value for placeholder {{" + std::string(name) + "}}");
        out.append(it->second);
        pos = close + 2;
    }
    return out;
}

}  // namespace drsr::prompts
