#pragma once

#include <cstddef>
#include <cstdint>

// Thread-local accounting of multiply-add work and live tensor payload bytes.
// Scratch usage is measured with ScratchScope: it records the live byte count
// at entry and tracks the high-water mark of (live - base) until destruction.
// All counters are exact (they count tensor payloads, not allocator noise),
// so equality comparisons across runs are meaningful.

namespace cmanp::instr {

void add_madds(std::uint64_t n);
std::uint64_t madds();

std::int64_t live_tensor_bytes();

// Called by the tensor storage on allocation/release of payload buffers.
void on_alloc(std::size_t bytes);
void on_free(std::size_t bytes);

class ScratchScope {
 public:
  ScratchScope();
  ~ScratchScope();
  ScratchScope(const ScratchScope&) = delete;
  ScratchScope& operator=(const ScratchScope&) = delete;

  // High-water mark of tensor bytes allocated above the entry baseline.
  std::uint64_t peak_scratch_bytes() const;
  // Multiply-adds executed since the scope was entered.
  std::uint64_t madds_in_scope() const;

 private:
  friend void on_alloc(std::size_t);
  std::int64_t base_live_;
  std::uint64_t base_madds_;
  std::int64_t peak_over_base_ = 0;
  ScratchScope* parent_;
};

}  // namespace cmanp::instr
