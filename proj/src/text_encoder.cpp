#include "idcloak/text_encoder.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace idcloak {

namespace {
const std::vector<std::string>& template_words() {
    static const std::vector<std::string> words = {"a",       "photo",   "of", "person", "dslr",
                                                   "portrait", "looking", "at", "the",    "mirror"};
    return words;
}
} // namespace

Vocabulary::Vocabulary(int extra_names) : words_(template_words()), extra_names_(extra_names) {
    if (extra_names < 0) throw std::invalid_argument("vocabulary: negative name count");
    words_.emplace_back(kIdentitySlot);
    for (int k = 0; k < extra_names; ++k) words_.push_back("id" + std::to_string(k));
}

int Vocabulary::id(const std::string& word) const {
    const auto it = std::find(words_.begin(), words_.end(), word);
    if (it == words_.end()) throw std::invalid_argument("unknown token '" + word + "'");
    return static_cast<int>(it - words_.begin());
}

PromptTemplate PromptTemplate::parse(const std::string& text, const Vocabulary& vocab) {
    PromptTemplate p;
    std::istringstream in(text);
    std::string w;
    int slots = 0;
    while (in >> w) {
        if (w == kIdentitySlot) {
            p.slot = p.tokens.size();
            ++slots;
        }
        p.tokens.push_back(vocab.id(w));
    }
    if (slots != 1) throw std::invalid_argument("prompt '" + text + "' must contain exactly one V* slot");
    return p;
}

PromptTemplate PromptTemplate::with_identity(int token) const {
    PromptTemplate p = *this;
    p.tokens[slot] = token;
    return p;
}

std::vector<std::string> default_prompts() {
    return {"a photo of V* person", "a dslr portrait of V* person", "a photo of V* person looking at the mirror"};
}

TextEncoderStub::TextEncoderStub(int vocab_size, int dim, Rng& init, double scale) : table_(dim, vocab_size) {
    if (vocab_size <= 0 || dim <= 0) throw std::invalid_argument("text encoder: empty table");
    for (Eigen::Index j = 0; j < table_.cols(); ++j)
        for (Eigen::Index i = 0; i < table_.rows(); ++i) table_(i, j) = scale * init.normal();
}

TextEncoderStub::TextEncoderStub(Eigen::MatrixXd table) : table_(std::move(table)) {
    if (table_.size() == 0) throw std::invalid_argument("text encoder: empty table");
}

ConditionEmbedding TextEncoderStub::encode(const PromptTemplate& prompt) const {
    Eigen::VectorXd c = Eigen::VectorXd::Zero(table_.rows());
    for (int tok : prompt.tokens) c += table_.col(tok);
    return ConditionEmbedding(c / static_cast<double>(prompt.tokens.size()));
}

Eigen::MatrixXd TextEncoderStub::backward(const PromptTemplate& prompt, const Eigen::VectorXd& grad_c) const {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(table_.rows(), table_.cols());
    const Eigen::VectorXd share = grad_c / static_cast<double>(prompt.tokens.size());
    for (int tok : prompt.tokens) g.col(tok) += share;
    return g;
}

} // namespace idcloak
