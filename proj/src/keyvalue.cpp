#include "idcloak/keyvalue.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "idcloak/errors.hpp"

namespace idcloak {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_plain(const std::string& s) {
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("not a number: '" + s + "'");
    }
    if (used != s.size()) throw std::invalid_argument("not a number: '" + s + "'");
    return v;
}

} // namespace

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_number(const std::string& text) {
    const std::string s = trim(text);
    const auto slash = s.find('/');
    if (slash == std::string::npos) return parse_plain(s);
    const double den = parse_plain(trim(s.substr(slash + 1)));
    if (den == 0.0) throw std::invalid_argument("zero denominator in '" + s + "'");
    return parse_plain(trim(s.substr(0, slash))) / den;
}

void KeyValue::set(const std::string& key, const std::string& value) {
    if (key.empty() || key.find('=') != std::string::npos || value.find('\n') != std::string::npos) {
        throw std::invalid_argument("invalid key/value '" + key + "'");
    }
    const auto it = index_.find(key);
    if (it != index_.end()) {
        entries_[it->second].second = value;
    } else {
        index_[key] = entries_.size();
        entries_.emplace_back(key, value);
    }
}

void KeyValue::set(const std::string& key, double value) { set(key, format_double(value)); }
void KeyValue::set(const std::string& key, long long value) { set(key, std::to_string(value)); }
void KeyValue::set(const std::string& key, std::uint64_t value) { set(key, std::to_string(value)); }

const std::string& KeyValue::get(const std::string& key) const {
    const auto it = index_.find(key);
    if (it == index_.end()) throw FormatError("missing key '" + key + "'");
    return entries_[it->second].second;
}

std::string KeyValue::get_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key) : fallback;
}

double KeyValue::get_double(const std::string& key) const {
    try {
        return parse_number(get(key));
    } catch (const std::invalid_argument& e) {
        throw FormatError("key '" + key + "': " + e.what());
    }
}

long long KeyValue::get_int(const std::string& key) const {
    try {
        std::size_t used = 0;
        const std::string& v = get(key);
        const long long r = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception&) {
        throw FormatError("key '" + key + "': not an integer");
    }
}

std::uint64_t KeyValue::get_u64(const std::string& key) const {
    try {
        std::size_t used = 0;
        const std::string& v = get(key);
        const unsigned long long r = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception&) {
        throw FormatError("key '" + key + "': not an unsigned integer");
    }
}

std::string KeyValue::str() const {
    std::ostringstream os;
    for (const auto& [k, v] : entries_) os << k << '=' << v << '\n';
    return os.str();
}

KeyValue KeyValue::parse(const std::string& text, const std::string& source) {
    KeyValue kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw FormatError(source + ":" + std::to_string(lineno) + ": expected key=value");
        }
        kv.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return kv;
}

KeyValue KeyValue::load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path.string());
}

void KeyValue::save(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open '" + path.string() + "' for writing");
    f << str();
}

} // namespace idcloak
