#include "cmanp/instrument.hpp"

#include <algorithm>

namespace cmanp::instr {

namespace {
thread_local std::uint64_t g_madds = 0;
thread_local std::int64_t g_live_bytes = 0;
thread_local ScratchScope* g_scope_top = nullptr;
}  // namespace

void add_madds(std::uint64_t n) { g_madds += n; }

std::uint64_t madds() { return g_madds; }

std::int64_t live_tensor_bytes() { return g_live_bytes; }

void on_alloc(std::size_t bytes) {
  g_live_bytes += static_cast<std::int64_t>(bytes);
  for (ScratchScope* s = g_scope_top; s != nullptr; s = s->parent_) {
    s->peak_over_base_ = std::max(s->peak_over_base_, g_live_bytes - s->base_live_);
  }
}

void on_free(std::size_t bytes) { g_live_bytes -= static_cast<std::int64_t>(bytes); }

ScratchScope::ScratchScope()
    : base_live_(g_live_bytes), base_madds_(g_madds), parent_(g_scope_top) {
  g_scope_top = this;
}

ScratchScope::~ScratchScope() { g_scope_top = parent_; }

std::uint64_t ScratchScope::peak_scratch_bytes() const {
  return peak_over_base_ > 0 ? static_cast<std::uint64_t>(peak_over_base_) : 0;
}

std::uint64_t ScratchScope::madds_in_scope() const { return g_madds - base_madds_; }

}  // namespace cmanp::instr
