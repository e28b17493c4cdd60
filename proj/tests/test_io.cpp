#include <doctest.h>

#include <cstring>
#include <fstream>
#include <limits>

#include "idcloak/artifacts.hpp"
#include "idcloak/errors.hpp"
#include "idcloak/keyvalue.hpp"
#include "idcloak/tns_io.hpp"
#include "scratch.hpp"

using namespace idcloak;

namespace {

TnsRecord sample_record() {
    TnsRecord rec;
    rec.shape = {2, 3};
    rec.values.resize(6);
    rec.values << 0.5, -1.25, 3.0, 1e-300, -0.0, 42.0;
    return rec;
}

std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream f(p, std::ios::binary);
    f << bytes;
}

} // namespace

TEST_CASE("tns bytes follow the documented layout") {
    const std::string bytes = encode_tns(sample_record());
    REQUIRE(bytes.size() == 4 + 2 + 1 + 2 * 4 + 6 * 8);
    CHECK(bytes.substr(0, 4) == "IDTN");
    CHECK(static_cast<unsigned char>(bytes[4]) == 1);
    CHECK(static_cast<unsigned char>(bytes[5]) == 0);
    CHECK(static_cast<unsigned char>(bytes[6]) == 2);
    CHECK(static_cast<unsigned char>(bytes[7]) == 2);
    CHECK(static_cast<unsigned char>(bytes[11]) == 3);
    double first = 0.0;
    std::memcpy(&first, bytes.data() + 15, 8);
    CHECK(first == 0.5);
}

TEST_CASE("tns round trip is bit exact with and without a slice table") {
    auto rec = sample_record();
    auto back = decode_tns(encode_tns(rec));
    CHECK(back.shape == rec.shape);
    CHECK(std::memcmp(back.values.data(), rec.values.data(), 6 * sizeof(double)) == 0);
    CHECK(back.slices.empty());

    rec.slices = {{"a", 0, 2}, {"bb", 2, 4}};
    back = decode_tns(encode_tns(rec));
    CHECK(back.slices == rec.slices);

    TnsRecord scalar;
    scalar.values = Eigen::VectorXd::Constant(1, 7.0);
    back = decode_tns(encode_tns(scalar));
    CHECK(back.shape.empty());
    CHECK(back.values[0] == 7.0);
}

TEST_CASE("malformed tns bytes raise format errors") {
    const std::string good = encode_tns(sample_record());
    std::string bad = good;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_tns(bad), FormatError);
    bad = good;
    bad[4] = 9;
    CHECK_THROWS_AS(decode_tns(bad), FormatError);
    CHECK_THROWS_AS(decode_tns(good.substr(0, good.size() - 3)), FormatError);
    CHECK_THROWS_AS(decode_tns(good.substr(0, 5)), FormatError);
    CHECK_THROWS_AS(decode_tns(good + "zz"), FormatError);

    auto nan_rec = sample_record();
    nan_rec.values[2] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(decode_tns(encode_tns(nan_rec)), FormatError);

    auto sliced = sample_record();
    sliced.slices = {{"w", 4, 5}};
    CHECK_THROWS_AS(decode_tns(encode_tns(sliced)), FormatError);

    auto wrong = sample_record();
    wrong.shape = {4};
    CHECK_THROWS_AS(encode_tns(wrong), std::invalid_argument);

    try {
        decode_tns(bad, "weights.tns");
        FAIL("expected a throw");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("weights.tns") != std::string::npos);
    }
}

TEST_CASE("tensor files and stacks") {
    ScratchDir dir("tns");
    Rng r(1);
    const DataTensor t({4, 4}, r.normal_vector(16));
    write_tensor(dir / "t.tns", t);
    CHECK(read_tensor(dir / "t.tns") == t);

    std::vector<DataTensor> items{t, t.with_values(r.normal_vector(16)), t.with_values(r.normal_vector(16))};
    write_tensor_stack(dir / "s.tns", items);
    CHECK(read_tns(dir / "s.tns").shape == Shape{3, 4, 4});
    const auto back = read_tensor_stack(dir / "s.tns");
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(back[i] == items[i]);

    CHECK_THROWS_AS(read_tensor(dir / "missing.tns"), DataError);
    CHECK_THROWS_AS(write_tensor_stack(dir / "e.tns", {}), std::invalid_argument);
}

TEST_CASE("key/value records") {
    KeyValue kv;
    kv.set("b", 3);
    kv.set("a", 0.1);
    kv.set("h", std::uint64_t{18446744073709551615ULL});
    kv.set("s", "two words");
    kv.set("b", 4);
    const auto back = KeyValue::parse(kv.str());
    CHECK(back.entries().size() == 4);
    CHECK(back.entries()[0].first == "b");
    CHECK(back.get_int("b") == 4);
    CHECK(back.get_double("a") == 0.1);
    CHECK(back.get_u64("h") == 18446744073709551615ULL);
    CHECK(back.get("s") == "two words");
    CHECK(back.get_or("zz", "fallback") == "fallback");
    CHECK_THROWS_AS(back.get("zz"), FormatError);
    CHECK_THROWS_AS(back.get_int("s"), FormatError);
    CHECK_THROWS_AS(KeyValue::parse("# note\n\nno equals sign\n"), FormatError);
    CHECK(KeyValue::parse("# note\n\nx = 1\n").get("x") == "1");

    CHECK(parse_number("16/255") == 16.0 / 255.0);
    CHECK(parse_number("1e-3") == 1e-3);
    CHECK_THROWS_AS(parse_number("1/0"), std::invalid_argument);
    CHECK_THROWS_AS(parse_number("abc"), std::invalid_argument);
    CHECK(parse_number(format_double(0.1 + 0.2)) == 0.1 + 0.2);
}

TEST_CASE("checkpoint round trip and integrity checks") {
    ScratchDir dir("ckpt");
    Rng init(3);
    const DenoiserModel model(DenoiserArch{16, 12, 2, 8, 4}, init);
    KeyValue extra;
    extra.set("note", "base");
    write_checkpoint(dir / "m.tns", model, extra);
    CHECK(std::filesystem::exists(dir / "m.meta"));
    CHECK(read_sidecar(dir / "m.tns").get("note") == "base");
    const auto back = read_checkpoint(dir / "m.tns");
    CHECK(back.arch() == model.arch());
    CHECK(back.params() == model.params());
    CHECK(back.hash() == model.hash());

    // flipping one payload value must trip the hash check
    std::string bytes = read_bytes(dir / "m.tns");
    bytes[4 + 2 + 1 + 4 + 8 * 5] ^= 0x01;
    write_bytes(dir / "m.tns", bytes);
    CHECK_THROWS_AS(read_checkpoint(dir / "m.tns"), FormatError);

    write_checkpoint(dir / "m.tns", model);
    auto meta = read_sidecar(dir / "m.tns");
    meta.set("arch.hidden", 13);
    meta.save(dir / "m.meta");
    CHECK_THROWS_AS(read_checkpoint(dir / "m.tns"), FormatError);

    std::filesystem::remove(dir / "m.meta");
    CHECK_THROWS_AS(read_checkpoint(dir / "m.tns"), DataError);

    write_tensor(dir / "plain.tns", DataTensor::zeros({3}));
    KeyValue wrong;
    wrong.set("kind", "cloak");
    wrong.save(dir / "plain.meta");
    CHECK_THROWS_AS(read_checkpoint(dir / "plain.tns"), FormatError);
}

TEST_CASE("encoder, embedder, subspace, anchors, condition and cloak round trips") {
    ScratchDir dir("art");
    Rng r(5);

    const TextEncoderStub enc(7, 4, r, 0.5);
    write_encoder(dir / "enc.tns", enc);
    CHECK(read_encoder(dir / "enc.tns") == enc);

    IdentityEmbedder emb(EmbedderArch{16, 8, 4}, r);
    emb.info.steps = 12;
    emb.info.heldout = {0.9, 0.1};
    write_embedder(dir / "emb.tns", emb);
    const auto emb2 = read_embedder(dir / "emb.tns");
    CHECK(emb2.params() == emb.params());
    CHECK(emb2.arch() == emb.arch());
    CHECK(emb2.info.steps == 12);
    CHECK(emb2.info.heldout.same == 0.9);

    IdentitySubspace q;
    q.mu = ConditionEmbedding(r.normal_vector(4));
    q.sigma = r.normal_vector(4).cwiseAbs();
    q.anchor_count = 4;
    q.divisor = SigmaDivisor::population;
    write_subspace(dir / "q.tns", q);
    const auto q2 = read_subspace(dir / "q.tns");
    CHECK(q2.mu == q.mu);
    CHECK(q2.sigma == q.sigma);
    CHECK(q2.anchor_count == 4);
    CHECK(q2.divisor == SigmaDivisor::population);
    CHECK(q2.hash() == q.hash());

    AnchorSet a;
    for (int i = 0; i < 3; ++i) {
        a.anchors.emplace_back(r.normal_vector(4));
        a.image_ids.push_back(2 - i);
    }
    write_anchors(dir / "a.tns", a);
    const auto a2 = read_anchors(dir / "a.tns");
    CHECK(a2.image_ids == a.image_ids);
    for (int i = 0; i < 3; ++i) CHECK(a2.anchors[static_cast<std::size_t>(i)] == a.anchors[static_cast<std::size_t>(i)]);

    const ConditionEmbedding c(r.normal_vector(4));
    write_condition(dir / "c.tns", c);
    CHECK(read_condition(dir / "c.tns") == c);

    Cloak ck;
    ck.delta = DataTensor({2, 2}, Eigen::Vector4d(0.01, -0.02, 0.0, 0.03));
    ck.eta = 0.05;
    ck.seed = 99;
    ck.model_hash = 0xabcdef;
    write_cloak(dir / "ck.tns", ck);
    const auto ck2 = read_cloak(dir / "ck.tns");
    CHECK(ck2.delta == ck.delta);
    CHECK(ck2.eta == ck.eta);
    CHECK(ck2.seed == 99);
    CHECK(ck2.model_hash == 0xabcdef);

    ck.delta[0] = 0.2;
    write_cloak(dir / "ck.tns", ck);
    CHECK_THROWS_AS(read_cloak(dir / "ck.tns"), DataError);
    CHECK(hex_hash(0xab) == "00000000000000ab");
}
