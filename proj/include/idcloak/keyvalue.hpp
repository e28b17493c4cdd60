#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace idcloak {

// Line-oriented "key=value" records used for configs, sidecars and
// manifests. Blank lines and '#' comments are ignored; order is preserved on
// write.
class KeyValue {
public:
    void set(const std::string& key, const std::string& value);
    void set(const std::string& key, double value);
    void set(const std::string& key, long long value);
    void set(const std::string& key, int value) { set(key, static_cast<long long>(value)); }
    void set(const std::string& key, std::uint64_t value);

    bool has(const std::string& key) const { return index_.count(key) != 0; }
    const std::string& get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key) const;
    long long get_int(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

    std::string str() const;
    static KeyValue parse(const std::string& text, const std::string& source = "<memory>");
    static KeyValue load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

private:
    std::vector<std::pair<std::string, std::string>> entries_;
    std::map<std::string, std::size_t> index_;
};

// Full-precision decimal rendering of a double.
std::string format_double(double v);
// Accepts plain decimals and fractions such as "16/255".
double parse_number(const std::string& text);

} // namespace idcloak
