#pragma once

#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "partseg/common.hpp"

namespace partseg {

// Plain-text key-value configuration: one `key = value` per line, `#` comments.
class KeyValueConfig {
public:
    KeyValueConfig() = default;

    static KeyValueConfig from_file(const std::string& path);
    static KeyValueConfig from_string(const std::string& text);

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get_str(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    const std::map<std::string, std::string>& values() const { return values_; }
    std::string to_string() const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace partseg
