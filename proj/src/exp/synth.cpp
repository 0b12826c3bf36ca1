// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "taplab/exp/synth.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "taplab/fed/federation.hpp"

namespace taplab::exp {

using model::ModalityKind;
using model::TaskKind;

namespace {

using Matrix = std::vector<std::vector<double>>;

Matrix gaussian(std::size_t rows, std::size_t cols, double std, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, std);
    Matrix m(rows, std::vector<double>(cols));
    for (auto& r : m)
        for (auto& v : r) v = n(rng);
    return m;
}

void perturb(Matrix& m, double std, std::mt19937_64& rng) {
    if (std == 0.0) return;
    std::normal_distribution<double> n(0.0, std);
    for (auto& r : m)
        for (auto& v : r) v += n(rng);
}

// Row-wise softmax of transition logits.
Matrix transitions(const Matrix& logits) {
    Matrix p = logits;
    for (auto& row : p) {
        double mx = row[0];
        for (double v : row) mx = std::max(mx, v);
        double z = 0.0;
        for (auto& v : row) z += (v = std::exp(v - mx));
        for (auto& v : row) v /= z;
    }
    return p;
}

std::vector<int> markov_chain(const Matrix& p, std::size_t length, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> start(0, static_cast<int>(p.size()) - 1);
    std::vector<int> out{start(rng)};
    while (out.size() < length) {
        const auto& row = p[static_cast<std::size_t>(out.back())];
        out.push_back(std::discrete_distribution<int>(row.begin(), row.end())(rng));
    }
    return out;
}

// Everything a client draws from, after its shift is applied.
struct ClientLaw {
    Matrix centers;               // dense classification
    std::vector<Matrix> chains;   // transition probabilities: one per class, or one for generation
    Matrix basis;                 // reconstruction: input_dim x latent
    std::vector<double> offset;   // reconstruction
    std::vector<double> proportions;
};

model::Sample draw(const SynthDatasetSpec& s, const ClientLaw& law, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    model::Sample out;
    out.task = s.task;
    switch (s.kind) {
    case TaskKind::classification: {
        out.label = std::discrete_distribution<std::size_t>(law.proportions.begin(), law.proportions.end())(rng);
        if (s.modality == ModalityKind::dense) {
            for (double c : law.centers[out.label]) out.features.push_back(c + s.noise_std * n(rng));
        } else {
            out.tokens = markov_chain(law.chains[out.label], s.seq_len, rng);
            out.features = model::one_hot_tokens(out.tokens, s.vocab);
        }
        break;
    }
    case TaskKind::reconstruction: {
        std::vector<double> z(s.latent_dim);
        for (auto& v : z) v = n(rng);
        for (std::size_t r = 0; r < s.input_dim; ++r) {
            double x = law.offset[r];
            for (std::size_t k = 0; k < s.latent_dim; ++k) x += law.basis[r][k] * z[k];
            out.features.push_back(x);
        }
        out.target = out.features;
        break;
    }
    case TaskKind::sequence_generation: {
        const auto seq = markov_chain(law.chains[0], s.seq_len + s.generation_length, rng);
        out.tokens.assign(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(s.seq_len));
        out.next_tokens.assign(seq.begin() + static_cast<std::ptrdiff_t>(s.seq_len), seq.end());
        out.features = model::one_hot_tokens(out.tokens, s.vocab);
        break;
    }
    }
    return out;
}

}  // namespace

void SynthDatasetSpec::validate() const {
    const auto tag = "dataset '" + task + "': ";
    if (!(label_skew >= 0.0 && label_skew < 1.0)) throw std::invalid_argument(tag + "label_skew must lie in [0, 1)");
    if (!(center_shift >= 0.0 && center_shift <= 4.0)) throw std::invalid_argument(tag + "center_shift must lie in [0, 4]");
    if (!(noise_std >= 0.0) || !(separation >= 0.0) || !(concentration >= 0.0)) {
        throw std::invalid_argument(tag + "noise_std, separation and concentration must be >= 0");
    }
    if (train_per_client < 1 || val_per_client < 1) throw std::invalid_argument(tag + "needs train and val samples");
    if (modality == ModalityKind::dense && input_dim == 0) throw std::invalid_argument(tag + "input_dim must be > 0");
    if (modality == ModalityKind::tokens && (seq_len == 0 || vocab < 2)) {
        throw std::invalid_argument(tag + "token inputs need seq_len > 0 and vocab >= 2");
    }
    switch (kind) {
    case TaskKind::classification:
        if (classes < 2) throw std::invalid_argument(tag + "classification needs >= 2 classes");
        if (!centers.empty()) {
            if (centers.size() != classes) throw std::invalid_argument(tag + "one center per class required");
            for (const auto& c : centers)
                if (c.size() != input_dim) throw std::invalid_argument(tag + "center width must equal input_dim");
        }
        break;
    case TaskKind::reconstruction:
        if (modality != ModalityKind::dense) throw std::invalid_argument(tag + "reconstruction needs dense inputs");
        if (latent_dim == 0) throw std::invalid_argument(tag + "latent_dim must be > 0");
        break;
    case TaskKind::sequence_generation:
        if (modality != ModalityKind::tokens) throw std::invalid_argument(tag + "generation needs token inputs");
        if (generation_length == 0) throw std::invalid_argument(tag + "generation_length must be > 0");
        break;
    }
}

std::vector<double> label_proportions(std::size_t classes, double skew, std::size_t client) {
    std::vector<double> p(classes, (1.0 - skew) / static_cast<double>(classes));
    p[client % classes] += skew;
    return p;
}

std::vector<ClientSplit> synth_dataset(const SynthDatasetSpec& spec, std::size_t clients) {
    spec.validate();
    std::mt19937_64 global(fed::derive_seed(spec.seed, 0, 0xDA7A));
    Matrix centers = spec.centers;
    std::vector<Matrix> chains;
    Matrix basis;
    switch (spec.kind) {
    case TaskKind::classification:
        if (spec.modality == ModalityKind::dense && centers.empty()) {
            centers = gaussian(spec.classes, spec.input_dim, 1.0, global);
            for (auto& c : centers) {
                double norm = 0.0;
                for (double v : c) norm += v * v;
                for (auto& v : c) v *= spec.separation / std::sqrt(norm);
            }
        }
        if (spec.modality == ModalityKind::tokens)
            for (std::size_t c = 0; c < spec.classes; ++c) chains.push_back(gaussian(spec.vocab, spec.vocab, spec.concentration, global));
        break;
    case TaskKind::reconstruction:
        basis = gaussian(spec.input_dim, spec.latent_dim, 1.0 / std::sqrt(static_cast<double>(spec.latent_dim)), global);
        break;
    case TaskKind::sequence_generation:
        chains.push_back(gaussian(spec.vocab, spec.vocab, spec.concentration, global));
        break;
    }

    std::vector<ClientSplit> out(clients);
    for (std::size_t i = 0; i < clients; ++i) {
        std::mt19937_64 rng(fed::derive_seed(spec.seed, i + 1, 0xDA7A));
        ClientLaw law;
        if (spec.kind == TaskKind::classification) law.proportions = label_proportions(spec.classes, spec.label_skew, i);
        if (!centers.empty()) {
            law.centers = centers;
            perturb(law.centers, spec.center_shift * spec.separation / std::sqrt(static_cast<double>(spec.input_dim)),
                    rng);
        }
        for (const auto& c : chains) {
            Matrix logits = c;
            perturb(logits, spec.center_shift * spec.concentration, rng);
            law.chains.push_back(transitions(logits));
        }
        if (!basis.empty()) {
            law.basis = basis;
            perturb(law.basis, spec.center_shift / std::sqrt(static_cast<double>(spec.latent_dim)), rng);
            std::normal_distribution<double> n(0.0, spec.center_shift);
            for (std::size_t r = 0; r < spec.input_dim; ++r) law.offset.push_back(spec.center_shift > 0.0 ? n(rng) : 0.0);
        }
        for (std::size_t k = 0; k < spec.train_per_client; ++k) out[i].train.push_back(draw(spec, law, rng));
        for (std::size_t k = 0; k < spec.val_per_client; ++k) out[i].val.push_back(draw(spec, law, rng));
    }
    return out;
}

}  // namespace taplab::exp
