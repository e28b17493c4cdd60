#include "idcloak/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "idcloak/errors.hpp"
#include "idcloak/tns_io.hpp"

namespace idcloak {

namespace {

double blob(double x, double y, double cx, double cy, double sx, double sy) {
    const double u = (x - cx) / sx;
    const double v = (y - cy) / sy;
    return std::exp(-0.5 * (u * u + v * v));
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace

IdentityParams draw_identity(std::uint64_t identity_seed) {
    Rng r(Rng::derive(identity_seed, 0x1d));
    IdentityParams p;
    p.face_rx = r.uniform(3.8, 5.4);
    p.face_ry = r.uniform(4.8, 6.6);
    p.skin = r.uniform(0.6, 0.95);
    p.eye_dx = r.uniform(1.6, 3.0);
    p.eye_y = r.uniform(-2.4, -0.6);
    p.eye_size = r.uniform(0.5, 1.1);
    p.eye_dark = r.uniform(0.35, 0.7);
    p.brow_y = r.uniform(0.9, 1.8);
    p.brow_dark = r.uniform(0.1, 0.45);
    p.mouth_y = r.uniform(1.6, 3.4);
    p.mouth_w = r.uniform(1.0, 2.8);
    p.mouth_dark = r.uniform(0.2, 0.5);
    p.hair_line = r.uniform(-5.0, -2.8);
    p.hair_dark = r.uniform(0.2, 0.8);
    const int marks = 3;
    for (int k = 0; k < marks; ++k) {
        p.marks.push_back({r.uniform(-3.0, 3.0), r.uniform(-3.0, 3.5), r.uniform(-0.3, 0.3)});
    }
    return p;
}

ContextParams draw_context(Rng& rng, double spread, RenderStyle style) {
    ContextParams c;
    c.dx = spread * rng.uniform(-1.0, 1.0);
    c.dy = spread * rng.uniform(-1.0, 1.0);
    c.gain = 1.0 + spread * rng.uniform(-0.15, 0.15);
    c.background = 0.15 + spread * rng.uniform(-0.1, 0.1);
    c.bg_slope = spread * rng.uniform(-0.15, 0.15);
    c.light = spread * rng.uniform(-0.08, 0.08);
    c.style = style;
    return c;
}

DataTensor render_face(const IdentityParams& id, const ContextParams& ctx, int size) {
    if (size < 4) throw std::invalid_argument("render_face: size must be >= 4");
    const double unit = size / 16.0;  // parameters are authored for 16x16
    const double zoom = ctx.style == RenderStyle::dslr ? 1.2 : 1.0;
    const double contrast = ctx.style == RenderStyle::dslr ? 1.25 : 1.0;
    const double s = unit * zoom;
    const double cx = (size - 1) / 2.0 + ctx.dx * unit;
    const double cy = (size - 1) / 2.0 + ctx.dy * unit;

    Eigen::VectorXd v(size * size);
    for (int row = 0; row < size; ++row) {
        for (int col = 0; col < size; ++col) {
            const int src_col = ctx.style == RenderStyle::mirror ? size - 1 - col : col;
            const double x = src_col;
            const double y = row;
            const double bg = ctx.background + ctx.bg_slope * (x - (size - 1) / 2.0) / size;
            const double ex = (x - cx) / (id.face_rx * s);
            const double ey = (y - cy) / (id.face_ry * s);
            const double mask = sigmoid((1.0 - std::sqrt(ex * ex + ey * ey)) * 6.0);

            double face = id.skin + ctx.light * (x - cx) / (4.0 * s);
            face -= id.eye_dark * blob(x, y, cx - id.eye_dx * s, cy + id.eye_y * s, id.eye_size * s, id.eye_size * s);
            face -= id.eye_dark * blob(x, y, cx + id.eye_dx * s, cy + id.eye_y * s, id.eye_size * s, id.eye_size * s);
            face -= id.brow_dark * blob(x, y, cx - id.eye_dx * s, cy + (id.eye_y - id.brow_y) * s, 0.9 * s, 0.35 * s);
            face -= id.brow_dark * blob(x, y, cx + id.eye_dx * s, cy + (id.eye_y - id.brow_y) * s, 0.9 * s, 0.35 * s);
            face -= id.mouth_dark * blob(x, y, cx, cy + id.mouth_y * s, id.mouth_w * s, 0.45 * s);
            for (const auto& m : id.marks) face += m.amp * blob(x, y, cx + m.x * s, cy + m.y * s, 0.6 * s, 0.6 * s);
            const double hair = sigmoid((cy + id.hair_line * s - y) * 2.0 / s) * mask;
            face = face * (1.0 - hair) + (id.skin * (1.0 - id.hair_dark) * 0.5) * hair;

            double pixel = bg * (1.0 - mask) + face * mask;
            pixel = 0.5 + contrast * (pixel - 0.5);
            v[row * size + col] = std::clamp(pixel * ctx.gain, 0.0, 1.0);
        }
    }
    return DataTensor({static_cast<std::size_t>(size), static_cast<std::size_t>(size)}, std::move(v));
}

Shape IdentityDataset::shape() const {
    if (!train.empty()) return train[0].shape();
    if (!test.empty()) return test[0].shape();
    return {};
}

IdentityDataset synth_dataset(std::uint64_t identity_seed, int n_train, int n_test, double context_spread, int size) {
    if (n_train < 1 || n_test < 1) throw std::invalid_argument("synth_dataset: need at least one train and test image");
    if (context_spread < 0.0) throw std::invalid_argument("synth_dataset: context spread must be >= 0");
    IdentityDataset ds;
    ds.identity = "synth-" + std::to_string(identity_seed);
    ds.seed = identity_seed;
    ds.context_spread = context_spread;
    const IdentityParams id = draw_identity(identity_seed);
    Rng ctx_rng(Rng::derive(identity_seed, 0xc7));
    for (int i = 0; i < n_train + n_test; ++i) {
        DataTensor img = render_face(id, draw_context(ctx_rng, context_spread), size);
        (i < n_train ? ds.train : ds.test).push_back(std::move(img));
    }
    return ds;
}

IdentityDataset import_dataset(const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw DataError("cannot open manifest '" + manifest.string() + "'");
    IdentityDataset ds;
    ds.identity = manifest.stem().string();
    ds.manifest = manifest;
    const auto root = manifest.parent_path();
    std::set<std::filesystem::path> train_files, test_files;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw DataError(manifest.string() + ":" + std::to_string(lineno) + ": expected key=value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "identity") {
            ds.identity = value;
            continue;
        }
        if (key != "train" && key != "test") {
            throw DataError(manifest.string() + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
        const auto path = std::filesystem::weakly_canonical(root / value);
        auto& mine = key == "train" ? train_files : test_files;
        const auto& other = key == "train" ? test_files : train_files;
        if (other.count(path)) throw DataError("file '" + value + "' appears in both train and test splits");
        if (!mine.insert(path).second) throw DataError("file '" + value + "' listed twice in the " + key + " split");
        if (!std::filesystem::exists(path)) throw DataError("missing file '" + path.string() + "'");
        DataTensor img = read_tensor(path);
        (key == "train" ? ds.train : ds.test).push_back(std::move(img));
    }
    if (ds.train.empty() || ds.test.empty()) throw DataError(manifest.string() + ": need both train and test images");
    const Shape shape = ds.train[0].shape();
    for (const auto* split : {&ds.train, &ds.test}) {
        for (const auto& img : *split) {
            if (img.shape() != shape) {
                throw DataError(manifest.string() + ": image shape " + shape_string(img.shape()) +
                                " differs from " + shape_string(shape));
            }
        }
    }
    return ds;
}

std::vector<LabeledImage> synth_corpus(std::uint64_t seed, int identities, int per_identity, double spread,
                                       int size) {
    std::vector<LabeledImage> out;
    for (int k = 0; k < identities; ++k) {
        const IdentityParams id = draw_identity(Rng::derive(seed, static_cast<std::uint64_t>(k)));
        Rng ctx(Rng::derive(seed, 0x10000 + static_cast<std::uint64_t>(k)));
        for (int i = 0; i < per_identity; ++i) {
            const auto style = static_cast<RenderStyle>(i % 3);
            out.push_back({render_face(id, draw_context(ctx, spread, style), size), k, style});
        }
    }
    return out;
}

} // namespace idcloak
