// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "taplab/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace taplab::model {

namespace {

constexpr char kMagic[8] = {'T', 'A', 'P', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes a little-endian host");

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw std::runtime_error("truncated checkpoint at byte " + std::to_string(pos_));
    }

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string get_string() {
        const auto n = get<std::uint32_t>();
        need(n);
        std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                      bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        put_string(out, e.block.key);
        put_string(out, e.name);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.rank()));
        for (auto d : e.value.shape()) put<std::uint64_t>(out, d);
        const auto data = e.value.data();
        const auto* p = reinterpret_cast<const std::uint8_t*>(data.data());
        out.insert(out.end(), p, p + data.size() * sizeof(double));
    }
    return out;
}

std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    r.need(sizeof(kMagic));
    if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw std::runtime_error("not a checkpoint (bad magic)");
    for (std::size_t i = 0; i < sizeof(kMagic); ++i) (void)r.get<std::uint8_t>();
    const auto count = r.get<std::uint32_t>();
    std::vector<CheckpointEntry> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        e.block.key = r.get_string();
        e.name = r.get_string();
        const auto rank = r.get<std::uint32_t>();
        if (rank < 1 || rank > 2) throw std::runtime_error("checkpoint entry '" + e.name + "' has rank " + std::to_string(rank));
        ad::Shape shape;
        for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
        std::vector<double> data(ad::shape_size(shape));
        for (auto& v : data) v = r.get<double>();
        e.value = ad::Tensor(shape, std::move(data));
        out.push_back(std::move(e));
    }
    if (!r.done()) throw std::runtime_error("trailing bytes after checkpoint");
    return out;
}

std::vector<CheckpointEntry> collect_blocks(const ParamStore& store, const BlockPartition& partition,
                                            const std::set<BlockId>& blocks) {
    std::vector<CheckpointEntry> out;
    for (const auto& id : blocks)
        for (const auto& name : partition.names(id)) out.push_back({id, name, store.trainable.at(name)});
    return out;
}

void save_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries) {
    const auto bytes = encode_checkpoint(entries);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<CheckpointEntry> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace taplab::model
