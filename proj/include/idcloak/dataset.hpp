#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "idcloak/rng.hpp"
#include "idcloak/tensor.hpp"

namespace idcloak {

// Procedural faces. Identity parameters (face shape, tone, feature layout,
// marks) are fixed per identity seed; context parameters (pose shift,
// illumination, background) are drawn per image and scaled by a spread.
enum class RenderStyle { photo = 0, dslr = 1, mirror = 2 };

struct IdentityParams {
    double face_rx, face_ry, skin;
    double eye_dx, eye_y, eye_size, eye_dark;
    double brow_y, brow_dark;
    double mouth_y, mouth_w, mouth_dark;
    double hair_line, hair_dark;
    struct Mark { double x, y, amp; };
    std::vector<Mark> marks;
};

struct ContextParams {
    double dx = 0, dy = 0;
    double gain = 1.0;
    double background = 0.15;
    double bg_slope = 0.0;
    double light = 0.0;
    RenderStyle style = RenderStyle::photo;
};

IdentityParams draw_identity(std::uint64_t identity_seed);
ContextParams draw_context(Rng& rng, double spread, RenderStyle style = RenderStyle::photo);
DataTensor render_face(const IdentityParams& id, const ContextParams& ctx, int size);

struct IdentityDataset {
    std::string identity;
    std::vector<DataTensor> train;
    std::vector<DataTensor> test;
    std::uint64_t seed = 0;
    double context_spread = 0.0;
    std::filesystem::path manifest;  // set when imported

    Shape shape() const;
};

IdentityDataset synth_dataset(std::uint64_t identity_seed, int n_train, int n_test, double context_spread,
                              int size = 16);

// Manifest: one "train=<file>" or "test=<file>" per line, paths relative to
// the manifest; optional "identity=<name>"; '#' starts a comment.
IdentityDataset import_dataset(const std::filesystem::path& manifest);

struct LabeledImage {
    DataTensor image;
    int identity = 0;
    RenderStyle style = RenderStyle::photo;
};

// `identities` x `per_identity` renders with styles cycling photo/dslr/mirror.
std::vector<LabeledImage> synth_corpus(std::uint64_t seed, int identities, int per_identity, double spread,
                                       int size);

} // namespace idcloak
