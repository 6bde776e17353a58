#pragma once

// Flat key-value experiment configuration: `dotted.path = value` lines, `#`
// comments, and an `include PATH` directive resolved relative to the
// including file. Later assignments override earlier ones. The canonical
// form (sorted keys) is content-hashed into the run identifier that every
// output file carries.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace dac {

// Validation failures carry the offending field path; the CLI maps them to
// exit code 2.
class ConfigError : public std::runtime_error {
  public:
    ConfigError(const std::string& field, const std::string& message)
        : std::runtime_error(field + ": " + message), field_(field) {}
    const std::string& field() const { return field_; }

  private:
    std::string field_;
};

class ConfigMap {
  public:
    static ConfigMap parse_file(const std::string& path);
    static ConfigMap parse_text(const std::string& text, const std::string& base_dir = ".");

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    int get_int(const std::string& key, int fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    // Sorted "key = value" lines; stable across include order.
    std::string canonical() const;
    // FNV-1a over the canonical form, as 16 hex digits.
    std::string content_hash() const;

    const std::map<std::string, std::string>& values() const { return values_; }

  private:
    std::map<std::string, std::string> values_;
};

std::string hex_hash64(const std::string& text);

}  // namespace dac
