#pragma once

#include <filesystem>
#include <vector>

#include "idcloak/cloak.hpp"
#include "idcloak/denoiser.hpp"
#include "idcloak/embedder.hpp"
#include "idcloak/identity.hpp"
#include "idcloak/keyvalue.hpp"
#include "idcloak/text_encoder.hpp"

namespace idcloak {

// Every artifact is a ".tns" file; structured metadata lives in a key=value
// sidecar next to it with the ".meta" extension.
std::filesystem::path sidecar_path(const std::filesystem::path& tns);
KeyValue read_sidecar(const std::filesystem::path& tns);

// Checkpoints carry the parameter slice table; the sidecar holds the
// architecture and the model hash.
void write_checkpoint(const std::filesystem::path& path, const DenoiserModel& model, KeyValue meta = {});
DenoiserModel read_checkpoint(const std::filesystem::path& path);

// Token table stored as [vocab, dim].
void write_encoder(const std::filesystem::path& path, const TextEncoderStub& encoder);
TextEncoderStub read_encoder(const std::filesystem::path& path);

void write_embedder(const std::filesystem::path& path, const IdentityEmbedder& embedder);
IdentityEmbedder read_embedder(const std::filesystem::path& path);

// Rows: mu, sigma.
void write_subspace(const std::filesystem::path& path, const IdentitySubspace& q);
IdentitySubspace read_subspace(const std::filesystem::path& path);

void write_anchors(const std::filesystem::path& path, const AnchorSet& anchors);
AnchorSet read_anchors(const std::filesystem::path& path);

void write_condition(const std::filesystem::path& path, const ConditionEmbedding& c);
ConditionEmbedding read_condition(const std::filesystem::path& path);

void write_cloak(const std::filesystem::path& path, const Cloak& cloak);
Cloak read_cloak(const std::filesystem::path& path);

std::string hex_hash(std::uint64_t h);

} // namespace idcloak
