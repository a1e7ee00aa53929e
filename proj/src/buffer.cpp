#include "icl/buffer.hpp"

#include <algorithm>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "icl/error.hpp"

namespace icl {

void ReplayBuffer::offer(const BufferedSample& sample) {
    ++stream_count_;
    if (size() < capacity_) {
        entries_.push_back(sample);
        per_class_[sample.label]++;
        return;
    }
    // Acceptance follows the reservoir rule for both policies.
    const auto slot = rng_.uniform_int(0, static_cast<std::int64_t>(stream_count_) - 1);
    if (slot >= capacity_) return;

    int victim;
    if (policy_ == BufferPolicy::Reservoir) {
        victim = static_cast<int>(slot);
    } else {
        // Evict a uniformly random entry of a most-represented class; ties
        // among classes broken uniformly.
        int max_count = 0;
        for (const auto& [cls, cnt] : per_class_) max_count = std::max(max_count, cnt);
        std::vector<int> top_classes;
        for (const auto& [cls, cnt] : per_class_)
            if (cnt == max_count) top_classes.push_back(cls);
        const int cls = top_classes[rng_.uniform_int(0, static_cast<std::int64_t>(top_classes.size()) - 1)];
        std::vector<int> members;
        for (int i = 0; i < size(); ++i)
            if (entries_[i].label == cls) members.push_back(i);
        victim = members[rng_.uniform_int(0, static_cast<std::int64_t>(members.size()) - 1)];
    }

    per_class_[entries_[victim].label]--;
    if (per_class_[entries_[victim].label] == 0) per_class_.erase(entries_[victim].label);
    entries_[victim] = sample;
    per_class_[sample.label]++;
}

std::vector<BufferedSample> ReplayBuffer::sample_batch(int k, Rng& rng) const {
    std::vector<BufferedSample> out;
    if (entries_.empty() || k <= 0) return out;
    out.reserve(k);
    for (int i = 0; i < k; ++i)
        out.push_back(entries_[rng.uniform_int(0, static_cast<std::int64_t>(entries_.size()) - 1)]);
    return out;
}

Batch ReplayBuffer::sample_batch_as(const Shape& shape, int k, Rng& rng) const {
    return to_batch(sample_batch(k, rng), shape);
}

Batch to_batch(const std::vector<BufferedSample>& samples, const Shape& shape) {
    Batch b;
    b.x.resize(static_cast<int>(samples.size()), shape.c, shape.h, shape.w);
    b.labels.resize(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (static_cast<int>(samples[i].x.size()) != shape.size())
            throw ShapeError("to_batch: buffered sample does not match shape");
        std::copy(samples[i].x.begin(), samples[i].x.end(), b.x.sample(static_cast<int>(i)));
        b.labels[i] = samples[i].label;
    }
    return b;
}

void ReplayBuffer::save(std::ostream& os) const {
    nlohmann::json j;
    j["capacity"] = capacity_;
    j["policy"] = policy_ == BufferPolicy::Reservoir ? "reservoir" : "class_balanced";
    j["stream_count"] = stream_count_;
    j["rng"] = rng_.save_state();
    j["n_entries"] = entries_.size();
    j["sample_dim"] = entries_.empty() ? 0 : entries_[0].x.size();
    const std::string header = j.dump();
    const std::uint64_t len = header.size();
    os.write("ICLBUF01", 8);
    os.write(reinterpret_cast<const char*>(&len), sizeof(len));
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& e : entries_) {
        const std::int32_t label = e.label;
        os.write(reinterpret_cast<const char*>(&label), sizeof(label));
        os.write(reinterpret_cast<const char*>(e.x.data()),
                 static_cast<std::streamsize>(e.x.size() * sizeof(double)));
    }
}

ReplayBuffer ReplayBuffer::load(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != "ICLBUF01") throw IoError("buffer: bad magic");
    std::uint64_t len = 0;
    is.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string header(len, '\0');
    is.read(header.data(), static_cast<std::streamsize>(len));
    if (!is) throw IoError("buffer: truncated header");
    const auto j = nlohmann::json::parse(header);

    ReplayBuffer buf;
    buf.capacity_ = j.at("capacity");
    buf.policy_ = j.at("policy") == "reservoir" ? BufferPolicy::Reservoir
                                                : BufferPolicy::ClassBalanced;
    buf.stream_count_ = j.at("stream_count");
    buf.rng_.load_state(j.at("rng"));
    const std::size_t n = j.at("n_entries");
    const std::size_t dim = j.at("sample_dim");
    for (std::size_t i = 0; i < n; ++i) {
        BufferedSample s;
        std::int32_t label = 0;
        is.read(reinterpret_cast<char*>(&label), sizeof(label));
        s.label = label;
        s.x.resize(dim);
        is.read(reinterpret_cast<char*>(s.x.data()),
                static_cast<std::streamsize>(dim * sizeof(double)));
        buf.per_class_[s.label]++;
        buf.entries_.push_back(std::move(s));
    }
    if (!is) throw IoError("buffer: truncated entries");
    return buf;
}

}  // namespace icl
