#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "idcloak/rng.hpp"
#include "idcloak/tensor.hpp"

namespace idcloak {

// The token written in prompt text where the identity word goes.
inline constexpr const char* kIdentitySlot = "V*";

class Vocabulary {
public:
    // Template words plus the V* identifier, followed by `extra_names`
    // identity words ("id0", "id1", ...) used to caption the base corpus.
    explicit Vocabulary(int extra_names = 0);

    int size() const { return static_cast<int>(words_.size()); }
    int id(const std::string& word) const;
    const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
    int identity_token() const { return id(kIdentitySlot); }
    int name_token(int k) const { return id("id" + std::to_string(k)); }
    int extra_names() const { return extra_names_; }

private:
    std::vector<std::string> words_;
    int extra_names_ = 0;
};

// A token sequence with exactly one identity slot.
struct PromptTemplate {
    std::vector<int> tokens;  // slot position holds the V* token id
    std::size_t slot = 0;

    static PromptTemplate parse(const std::string& text, const Vocabulary& vocab);
    // Same template with a different word in the identity slot.
    PromptTemplate with_identity(int token) const;
};

// Fixed evaluation / personalization prompts.
std::vector<std::string> default_prompts();

// Learned token table with mean pooling: c = mean_k table[:, token_k].
class TextEncoderStub {
public:
    TextEncoderStub(int vocab_size, int dim, Rng& init, double scale = 1.0);
    TextEncoderStub(Eigen::MatrixXd table);

    int dim() const { return static_cast<int>(table_.rows()); }
    int vocab_size() const { return static_cast<int>(table_.cols()); }

    const Eigen::MatrixXd& table() const { return table_; }
    Eigen::MatrixXd& table() { return table_; }

    ConditionEmbedding encode(const PromptTemplate& prompt) const;
    // d loss / d table given d loss / d c for this prompt.
    Eigen::MatrixXd backward(const PromptTemplate& prompt, const Eigen::VectorXd& grad_c) const;

    friend bool operator==(const TextEncoderStub& a, const TextEncoderStub& b) { return a.table_ == b.table_; }

private:
    Eigen::MatrixXd table_;  // dim x vocab
};

} // namespace idcloak
