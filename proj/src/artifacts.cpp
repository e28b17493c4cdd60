#include "idcloak/artifacts.hpp"

#include <cstdio>
#include <sstream>

#include "idcloak/errors.hpp"
#include "idcloak/tns_io.hpp"

namespace idcloak {

namespace fs = std::filesystem;

std::string hex_hash(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

fs::path sidecar_path(const fs::path& tns) {
    fs::path p = tns;
    p.replace_extension(".meta");
    return p;
}

KeyValue read_sidecar(const fs::path& tns) {
    const fs::path p = sidecar_path(tns);
    if (!fs::exists(p)) throw DataError(tns.string() + ": missing sidecar " + p.string());
    return KeyValue::load(p);
}

namespace {

template <typename F>
auto meta_field(const fs::path& path, F&& f) {
    try {
        return f();
    } catch (const FormatError& e) {
        throw FormatError(sidecar_path(path).string() + ": " + e.what());
    } catch (const std::out_of_range& e) {
        throw FormatError(sidecar_path(path).string() + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw FormatError(sidecar_path(path).string() + ": " + e.what());
    }
}

void expect_kind(const fs::path& path, const KeyValue& kv, const std::string& kind) {
    const std::string got = kv.get_or("kind", "");
    if (got != kind) throw FormatError(sidecar_path(path).string() + ": expected kind '" + kind + "', found '" + got + "'");
}

DataTensor vector_tensor(const Eigen::VectorXd& v) {
    return DataTensor({static_cast<std::size_t>(v.size())}, v, Space::latent);
}

} // namespace

void write_checkpoint(const fs::path& path, const DenoiserModel& model, KeyValue meta) {
    TnsRecord rec;
    rec.shape = {static_cast<std::size_t>(model.params().size())};
    rec.values = model.params();
    for (const auto& s : model.slices()) {
        rec.slices.push_back({s.name, static_cast<std::uint64_t>(s.offset), static_cast<std::uint64_t>(s.length())});
    }
    write_tns(path, rec);
    const auto& a = model.arch();
    KeyValue kv;
    kv.set("kind", "denoiser");
    kv.set("arch.data_dim", a.data_dim);
    kv.set("arch.hidden", a.hidden);
    kv.set("arch.depth", a.depth);
    kv.set("arch.time_dim", a.time_dim);
    kv.set("arch.cond_dim", a.cond_dim);
    kv.set("model_hash", hex_hash(model.hash()));
    for (const auto& [k, v] : meta.entries()) kv.set(k, v);
    kv.save(sidecar_path(path));
}

DenoiserModel read_checkpoint(const fs::path& path) {
    const KeyValue kv = read_sidecar(path);
    expect_kind(path, kv, "denoiser");
    const DenoiserArch arch = meta_field(path, [&] {
        return DenoiserArch{static_cast<int>(kv.get_int("arch.data_dim")), static_cast<int>(kv.get_int("arch.hidden")),
                            static_cast<int>(kv.get_int("arch.depth")), static_cast<int>(kv.get_int("arch.time_dim")),
                            static_cast<int>(kv.get_int("arch.cond_dim"))};
    });
    TnsRecord rec = read_tns(path);
    const auto layout = DenoiserModel::layout(arch);
    if (rec.slices.size() != layout.size()) throw FormatError(path.string() + ": slice table does not match architecture");
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const auto& s = rec.slices[i];
        if (s.name != layout[i].name || s.offset != static_cast<std::uint64_t>(layout[i].offset) ||
            s.length != static_cast<std::uint64_t>(layout[i].length())) {
            throw FormatError(path.string() + ": slice '" + s.name + "' does not match architecture");
        }
    }
    if (rec.values.size() != static_cast<Eigen::Index>(DenoiserModel::layout(arch).back().offset +
                                                       DenoiserModel::layout(arch).back().length())) {
        throw FormatError(path.string() + ": parameter count does not match architecture");
    }
    DenoiserModel model(arch, std::move(rec.values));
    if (kv.has("model_hash") && kv.get("model_hash") != hex_hash(model.hash())) {
        throw FormatError(path.string() + ": model hash mismatch");
    }
    return model;
}

void write_encoder(const fs::path& path, const TextEncoderStub& encoder) {
    const auto& t = encoder.table();
    write_tensor(path, DataTensor({static_cast<std::size_t>(t.cols()), static_cast<std::size_t>(t.rows())},
                                  t.reshaped(), Space::latent));
}

TextEncoderStub read_encoder(const fs::path& path) {
    const DataTensor t = read_tensor(path);
    if (t.shape().size() != 2) throw FormatError(path.string() + ": token table must have rank 2");
    const auto vocab = static_cast<Eigen::Index>(t.shape()[0]);
    const auto dim = static_cast<Eigen::Index>(t.shape()[1]);
    return TextEncoderStub(Eigen::MatrixXd(t.values().reshaped(dim, vocab)));
}

void write_embedder(const fs::path& path, const IdentityEmbedder& embedder) {
    write_tensor(path, vector_tensor(embedder.params()));
    KeyValue kv;
    kv.set("kind", "embedder");
    kv.set("arch.input_dim", embedder.arch().input_dim);
    kv.set("arch.hidden", embedder.arch().hidden);
    kv.set("arch.feature_dim", embedder.arch().feature_dim);
    kv.set("train.steps", embedder.info.steps);
    kv.set("train.identities", embedder.info.identities);
    kv.set("train.final_loss", embedder.info.final_loss);
    kv.set("heldout.same", embedder.info.heldout.same);
    kv.set("heldout.cross", embedder.info.heldout.cross);
    kv.save(sidecar_path(path));
}

IdentityEmbedder read_embedder(const fs::path& path) {
    const KeyValue kv = read_sidecar(path);
    expect_kind(path, kv, "embedder");
    const EmbedderArch arch = meta_field(path, [&] {
        return EmbedderArch{static_cast<int>(kv.get_int("arch.input_dim")), static_cast<int>(kv.get_int("arch.hidden")),
                            static_cast<int>(kv.get_int("arch.feature_dim"))};
    });
    DataTensor t = read_tensor(path);
    if (t.size() != IdentityEmbedder::parameter_count(arch)) {
        throw FormatError(path.string() + ": parameter count does not match architecture");
    }
    IdentityEmbedder e(arch, t.values());
    meta_field(path, [&] {
        e.info.steps = static_cast<int>(kv.get_int("train.steps"));
        e.info.identities = static_cast<int>(kv.get_int("train.identities"));
        e.info.final_loss = kv.get_double("train.final_loss");
        e.info.heldout = {kv.get_double("heldout.same"), kv.get_double("heldout.cross")};
        return 0;
    });
    return e;
}

void write_subspace(const fs::path& path, const IdentitySubspace& q) {
    const auto d = static_cast<std::size_t>(q.dim());
    Eigen::VectorXd v(2 * q.dim());
    v << q.mu.values, q.sigma;
    write_tensor(path, DataTensor({2, d}, v, Space::latent));
    KeyValue kv;
    kv.set("kind", "subspace");
    kv.set("anchor_count", q.anchor_count);
    kv.set("divisor", q.divisor == SigmaDivisor::unbiased ? "n-1" : "n");
    kv.set("subspace_hash", hex_hash(q.hash()));
    kv.save(sidecar_path(path));
}

IdentitySubspace read_subspace(const fs::path& path) {
    const KeyValue kv = read_sidecar(path);
    expect_kind(path, kv, "subspace");
    const DataTensor t = read_tensor(path);
    if (t.shape().size() != 2 || t.shape()[0] != 2) throw FormatError(path.string() + ": subspace must have shape [2, dim]");
    const auto d = static_cast<Eigen::Index>(t.shape()[1]);
    IdentitySubspace q;
    q.mu = ConditionEmbedding(t.values().head(d));
    q.sigma = t.values().tail(d);
    q.anchor_count = static_cast<int>(meta_field(path, [&] { return kv.get_int("anchor_count"); }));
    q.divisor = kv.get_or("divisor", "n-1") == "n" ? SigmaDivisor::population : SigmaDivisor::unbiased;
    return q;
}

void write_anchors(const fs::path& path, const AnchorSet& anchors) {
    std::vector<DataTensor> items;
    for (const auto& a : anchors.anchors) items.push_back(vector_tensor(a.values));
    write_tensor_stack(path, items);
    KeyValue kv;
    kv.set("kind", "anchors");
    std::string ids;
    for (std::size_t i = 0; i < anchors.image_ids.size(); ++i) ids += (i ? "," : "") + std::to_string(anchors.image_ids[i]);
    kv.set("image_ids", ids);
    kv.save(sidecar_path(path));
}

AnchorSet read_anchors(const fs::path& path) {
    AnchorSet out;
    for (const auto& t : read_tensor_stack(path)) out.anchors.emplace_back(t.values());
    const KeyValue kv = read_sidecar(path);
    expect_kind(path, kv, "anchors");
    std::stringstream ids(kv.get_or("image_ids", ""));
    std::string item;
    meta_field(path, [&] {
        while (std::getline(ids, item, ',')) out.image_ids.push_back(std::stoi(item));
        return 0;
    });
    if (out.image_ids.size() != out.anchors.size()) {
        throw FormatError(sidecar_path(path).string() + ": image_ids count does not match anchors");
    }
    return out;
}

void write_condition(const fs::path& path, const ConditionEmbedding& c) { write_tensor(path, vector_tensor(c.values)); }

ConditionEmbedding read_condition(const fs::path& path) { return ConditionEmbedding(read_tensor(path).values()); }

void write_cloak(const fs::path& path, const Cloak& cloak) {
    write_tensor(path, cloak.delta);
    KeyValue kv;
    kv.set("kind", "cloak");
    kv.set("eta", cloak.eta);
    kv.set("alpha", cloak.alpha);
    kv.set("outer", cloak.outer);
    kv.set("inner", cloak.inner);
    kv.set("seed", cloak.seed);
    kv.set("model_hash", hex_hash(cloak.model_hash));
    kv.set("subspace_hash", hex_hash(cloak.subspace_hash));
    kv.save(sidecar_path(path));
}

Cloak read_cloak(const fs::path& path) {
    const KeyValue kv = read_sidecar(path);
    expect_kind(path, kv, "cloak");
    Cloak c;
    c.delta = read_tensor(path);
    meta_field(path, [&] {
        c.eta = kv.get_double("eta");
        c.alpha = kv.get_double("alpha");
        c.outer = static_cast<int>(kv.get_int("outer"));
        c.inner = static_cast<int>(kv.get_int("inner"));
        c.seed = kv.get_u64("seed");
        c.model_hash = std::stoull(kv.get("model_hash"), nullptr, 16);
        c.subspace_hash = std::stoull(kv.get("subspace_hash"), nullptr, 16);
        return 0;
    });
    if (c.delta.max_abs() > c.eta) throw DataError(path.string() + ": cloak exceeds its budget");
    return c;
}

} // namespace idcloak
