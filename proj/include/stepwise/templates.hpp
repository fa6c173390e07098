// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "stepwise/errors.hpp"
#include "stepwise/jsonl.hpp"

namespace stepwise {

/// Prompt bodies are external text assets, not code: one .txt per template id
/// (quick_think, slow_think, dynamic_annotate, augment, filter, score,
/// mutate). Files load byte-for-byte; {{name}} placeholders are substituted
/// at render time and every placeholder must resolve.
class TemplateStore {
  public:
    static TemplateStore load_dir(const std::filesystem::path& dir) {
        if (!std::filesystem::is_directory(dir))
            throw ConfigError("template directory not found: " + dir.string());
        TemplateStore store;
        for (const auto& entry : std::filesystem::directory_iterator(dir)) {
            if (!entry.is_regular_file() ||
                entry.path().extension() != ".txt")
                continue;
            store.set(entry.path().stem().string(), read_file(entry.path()));
        }
        return store;
    }

    void set(const std::string& id, std::string text) {
        templates_[id] = std::move(text);
    }

    bool has(const std::string& id) const { return templates_.count(id) > 0; }

    const std::string& get(const std::string& id) const {
        auto it = templates_.find(id);
        if (it == templates_.end())
            throw ConfigError("unknown template id: " + id);
        return it->second;
    }

    /// Substitutes every {{name}} with vars.at(name). Unused vars are fine;
    /// an unresolved placeholder is a configuration error, never silently
    /// passed through to a backend.
    static std::string render(const std::string& tpl,
                              const std::map<std::string, std::string>& vars) {
        std::string out;
        out.reserve(tpl.size());
        size_t pos = 0;
        while (pos < tpl.size()) {
            const size_t open = tpl.find("{{", pos);
            if (open == std::string::npos) {
                out.append(tpl, pos, std::string::npos);
                break;
            }
            const size_t close = tpl.find("}}", open + 2);
            if (close == std::string::npos)
                throw ConfigError("unterminated placeholder in template");
            out.append(tpl, pos, open - pos);
            const std::string name = tpl.substr(open + 2, close - open - 2);
            auto it = vars.find(name);
            if (it == vars.end())
                throw ConfigError("unresolved template placeholder: " + name);
            out += it->second;
            pos = close + 2;
        }
        return out;
    }

    std::string render_id(const std::string& id,
                          const std::map<std::string, std::string>& vars) const {
        return render(get(id), vars);
    }

  private:
    std::map<std::string, std::string> templates_;
};

}  // namespace stepwise
