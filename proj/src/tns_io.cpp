#include "idcloak/tns_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "idcloak/errors.hpp"

namespace idcloak {

static_assert(std::endian::native == std::endian::little, ".tns I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    Reader(const std::string& bytes, const std::string& source) : bytes_(bytes), source_(source) {}

    template <typename T>
    T get(const char* what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string get_string(std::size_t n, const char* what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

    [[noreturn]] void fail(const std::string& msg) const { throw FormatError(source_ + ": " + msg); }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) fail(std::string("truncated while reading ") + what);
    }

    const std::string& bytes_;
    const std::string& source_;
    std::size_t pos_ = 0;
};

} // namespace

std::string encode_tns(const TnsRecord& rec) {
    if (rec.shape.size() > 255) throw std::invalid_argument("tns: rank exceeds 255");
    if (shape_volume(rec.shape) != static_cast<std::size_t>(rec.values.size())) {
        throw std::invalid_argument("tns: value count does not match shape");
    }
    std::string out(kTnsMagic, 4);
    put<std::uint16_t>(out, kTnsVersion);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(rec.shape.size()));
    for (auto d : rec.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(rec.values.data()), static_cast<std::size_t>(rec.values.size()) * 8);
    if (!rec.slices.empty()) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(rec.slices.size()));
        for (const auto& s : rec.slices) {
            put<std::uint32_t>(out, static_cast<std::uint32_t>(s.name.size()));
            out += s.name;
            put<std::uint64_t>(out, s.offset);
            put<std::uint64_t>(out, s.length);
        }
    }
    return out;
}

TnsRecord decode_tns(const std::string& bytes, const std::string& source) {
    Reader r(bytes, source);
    if (r.get_string(4, "magic") != std::string(kTnsMagic, 4)) r.fail("bad magic bytes (not an IDTN tensor file)");
    const auto version = r.get<std::uint16_t>("version");
    if (version != kTnsVersion) r.fail("unsupported version " + std::to_string(version));
    const auto rank = r.get<std::uint8_t>("rank");
    TnsRecord rec;
    for (unsigned i = 0; i < rank; ++i) rec.shape.push_back(r.get<std::uint32_t>("dims"));
    const std::size_t n = shape_volume(rec.shape);
    rec.values.resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) rec.values[static_cast<Eigen::Index>(i)] = r.get<double>("payload");
    if (!r.done()) {
        const auto count = r.get<std::uint32_t>("slice count");
        for (std::uint32_t i = 0; i < count; ++i) {
            NamedSlice s;
            const auto len = r.get<std::uint32_t>("slice name length");
            s.name = r.get_string(len, "slice name");
            s.offset = r.get<std::uint64_t>("slice offset");
            s.length = r.get<std::uint64_t>("slice length");
            if (s.offset + s.length > n) r.fail("slice '" + s.name + "' exceeds payload");
            rec.slices.push_back(std::move(s));
        }
        if (!r.done()) r.fail("trailing bytes after slice table");
    }
    if (!rec.values.allFinite()) r.fail("payload contains non-finite values");
    return rec;
}

void write_tns(const std::filesystem::path& path, const TnsRecord& rec) {
    const std::string bytes = encode_tns(rec);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open '" + path.string() + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("failed writing '" + path.string() + "'");
}

TnsRecord read_tns(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return decode_tns(ss.str(), path.string());
}

void write_tensor(const std::filesystem::path& path, const DataTensor& t) {
    write_tns(path, TnsRecord{t.shape(), t.values(), {}});
}

DataTensor read_tensor(const std::filesystem::path& path) {
    TnsRecord rec = read_tns(path);
    return DataTensor(std::move(rec.shape), std::move(rec.values));
}

void write_tensor_stack(const std::filesystem::path& path, const std::vector<DataTensor>& items) {
    if (items.empty()) throw std::invalid_argument("write_tensor_stack: nothing to write");
    Shape shape{items.size()};
    shape.insert(shape.end(), items[0].shape().begin(), items[0].shape().end());
    const auto per = static_cast<Eigen::Index>(items[0].size());
    Eigen::VectorXd values(per * static_cast<Eigen::Index>(items.size()));
    for (std::size_t i = 0; i < items.size(); ++i) {
        require_same_shape(items[0], items[i], "write_tensor_stack");
        values.segment(static_cast<Eigen::Index>(i) * per, per) = items[i].values();
    }
    write_tns(path, TnsRecord{shape, values, {}});
}

std::vector<DataTensor> read_tensor_stack(const std::filesystem::path& path) {
    TnsRecord rec = read_tns(path);
    if (rec.shape.empty()) throw FormatError(path.string() + ": stacked tensor needs rank >= 1");
    const Shape item(rec.shape.begin() + 1, rec.shape.end());
    const auto per = static_cast<Eigen::Index>(shape_volume(item));
    std::vector<DataTensor> out;
    for (std::size_t i = 0; i < rec.shape[0]; ++i) {
        out.emplace_back(item, rec.values.segment(static_cast<Eigen::Index>(i) * per, per));
    }
    return out;
}

} // namespace idcloak
