#pragma once

// Typed, error-collecting accessors over a parsed TOML table. Shared by the
// cohort loader and the run configuration.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#ifndef TOML_EXCEPTIONS
#define TOML_EXCEPTIONS 1
#endif
#include <toml.hpp>

#include "cehr/cohort.hpp"

namespace cehr::detail {

class TomlReader {
   public:
    explicit TomlReader(std::string base_dir = "") : base_dir_(std::move(base_dir)) {}

    std::vector<std::string> errors;

    void check_keys(const toml::table& t, const std::string& where, std::initializer_list<const char*> allowed) {
        for (const auto& [k, v] : t) {
            const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return k.str() == a; });
            if (!ok) errors.push_back("unknown key '" + qualify(where, std::string(k.str())) + "'");
        }
    }

    std::string get_string(const toml::table& t, const std::string& where, const char* key, const std::string& fallback,
                           bool required = false) {
        const auto* node = t.get(key);
        if (!node) {
            if (required) errors.push_back("missing key '" + qualify(where, key) + "'");
            return fallback;
        }
        if (const auto* s = node->as_string()) return s->get();
        errors.push_back("'" + qualify(where, key) + "' must be a string");
        return fallback;
    }

    bool get_bool(const toml::table& t, const std::string& where, const char* key, bool fallback) {
        const auto* node = t.get(key);
        if (!node) return fallback;
        if (const auto* b = node->as_boolean()) return b->get();
        errors.push_back("'" + qualify(where, key) + "' must be a boolean");
        return fallback;
    }

    std::int64_t get_int(const toml::table& t, const std::string& where, const char* key, std::int64_t fallback) {
        const auto* node = t.get(key);
        if (!node) return fallback;
        if (const auto* i = node->as_integer()) return i->get();
        errors.push_back("'" + qualify(where, key) + "' must be an integer");
        return fallback;
    }

    /// Integer or the string "unbounded".
    std::optional<int> get_window(const toml::table& t, const std::string& where, const char* key) {
        const auto* node = t.get(key);
        if (!node) {
            errors.push_back("missing key '" + qualify(where, key) + "'");
            return 0;
        }
        if (const auto* i = node->as_integer()) return static_cast<int>(i->get());
        if (const auto* s = node->as_string(); s && s->get() == "unbounded") return std::nullopt;
        errors.push_back("'" + qualify(where, key) + "' must be an integer or \"unbounded\"");
        return 0;
    }

    std::set<std::string> get_strings(const toml::table& t, const std::string& where, const char* key) {
        std::set<std::string> out;
        const auto* node = t.get(key);
        if (!node) return out;
        const auto* arr = node->as_array();
        if (!arr) {
            errors.push_back("'" + qualify(where, key) + "' must be an array of strings");
            return out;
        }
        for (const auto& item : *arr) {
            if (const auto* s = item.as_string()) out.insert(s->get());
            else errors.push_back("'" + qualify(where, key) + "' must hold only strings");
        }
        return out;
    }

    std::set<std::string> get_concept_set(const toml::table& t, const std::string& where) {
        const std::string rel = get_string(t, where, "concept_set", "");
        if (rel.empty()) return {};
        const auto path = (std::filesystem::path(base_dir_) / rel).lexically_normal().string();
        try {
            auto ids = load_concept_set(path);
            if (ids.empty()) errors.push_back("concept set " + path + " is empty");
            return ids;
        } catch (const std::exception& e) {
            errors.push_back(e.what());
            return {};
        }
    }

    template <typename Enum>
    Enum get_enum(const toml::table& t, const std::string& where, const char* key, Enum fallback,
                  std::initializer_list<std::pair<const char*, Enum>> choices) {
        const std::string s = get_string(t, where, key, "");
        if (s.empty()) return fallback;
        for (const auto& [name, value] : choices)
            if (s == name) return value;
        std::string allowed;
        for (const auto& [name, value] : choices) allowed += std::string(allowed.empty() ? "" : "|") + name;
        errors.push_back("'" + qualify(where, key) + "' must be one of " + allowed + ", got \"" + s + "\"");
        return fallback;
    }


    double get_double(const toml::table& t, const std::string& where, const char* key, double fallback) {
        const auto* node = t.get(key);
        if (!node) return fallback;
        if (const auto* d = node->as_floating_point()) return d->get();
        if (const auto* i = node->as_integer()) return static_cast<double>(i->get());
        errors.push_back("'" + qualify(where, key) + "' must be a number");
        return fallback;
    }

    std::vector<std::string> get_string_list(const toml::table& t, const std::string& where, const char* key,
                                             std::vector<std::string> fallback) {
        const auto* node = t.get(key);
        if (!node) return fallback;
        const auto* arr = node->as_array();
        if (!arr) {
            errors.push_back("'" + qualify(where, key) + "' must be an array of strings");
            return fallback;
        }
        std::vector<std::string> out;
        for (const auto& item : *arr) {
            if (const auto* s = item.as_string()) out.push_back(s->get());
            else errors.push_back("'" + qualify(where, key) + "' must hold only strings");
        }
        return out;
    }

    std::vector<double> get_double_list(const toml::table& t, const std::string& where, const char* key,
                                        std::vector<double> fallback) {
        const auto* node = t.get(key);
        if (!node) return fallback;
        const auto* arr = node->as_array();
        if (!arr) {
            errors.push_back("'" + qualify(where, key) + "' must be an array of numbers");
            return fallback;
        }
        std::vector<double> out;
        for (const auto& item : *arr) {
            if (const auto* d = item.as_floating_point()) out.push_back(d->get());
            else if (const auto* i = item.as_integer()) out.push_back(static_cast<double>(i->get()));
            else errors.push_back("'" + qualify(where, key) + "' must hold only numbers");
        }
        return out;
    }

    /// Sub-table, or nullptr when absent (an error when present but not a table).
    const toml::table* get_table(const toml::table& t, const char* key) {
        const auto* node = t.get(key);
        if (!node) return nullptr;
        if (const auto* tt = node->as_table()) return tt;
        errors.push_back("'" + std::string(key) + "' must be a table");
        return nullptr;
    }

   private:
    static std::string qualify(const std::string& where, const std::string& key) {
        return where.empty() ? key : where + "." + key;
    }
    std::string base_dir_;
};

}  // namespace cehr::detail
