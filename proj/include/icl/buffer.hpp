#pragma once

#include <iosfwd>
#include <map>
#include <vector>

#include "icl/rng.hpp"
#include "icl/tensor.hpp"

namespace icl {

enum class BufferPolicy { Reservoir, ClassBalanced };

struct BufferedSample {
    std::vector<double> x;
    int label = 0;
};

// Fixed-capacity exemplar memory. Offers use the buffer's own generator so
// that read-only sampling (which takes an external generator) never perturbs
// the stored contents.
class ReplayBuffer {
public:
    ReplayBuffer() = default;
    ReplayBuffer(int capacity, BufferPolicy policy, std::uint64_t seed)
        : capacity_(capacity), policy_(policy), rng_(Rng::seeded(seed, 301)) {}

    int capacity() const { return capacity_; }
    int size() const { return static_cast<int>(entries_.size()); }
    bool empty() const { return entries_.empty(); }
    std::uint64_t stream_count() const { return stream_count_; }
    BufferPolicy policy() const { return policy_; }
    const std::vector<BufferedSample>& entries() const { return entries_; }
    const std::map<int, int>& per_class_counts() const { return per_class_; }

    // Never fails; rejection is a valid outcome once the buffer is full.
    void offer(const BufferedSample& sample);

    // k entries uniformly with replacement; empty buffer yields an empty batch.
    std::vector<BufferedSample> sample_batch(int k, Rng& rng) const;

    // Batch view of sample_batch with the given tensor shape.
    Batch sample_batch_as(const Shape& shape, int k, Rng& rng) const;

    void save(std::ostream& os) const;
    static ReplayBuffer load(std::istream& is);

private:
    int capacity_ = 0;
    BufferPolicy policy_ = BufferPolicy::Reservoir;
    std::uint64_t stream_count_ = 0;
    std::vector<BufferedSample> entries_;
    std::map<int, int> per_class_;
    Rng rng_;
};

Batch to_batch(const std::vector<BufferedSample>& samples, const Shape& shape);

}  // namespace icl
