#pragma once

namespace nfwpo {

/// Keeps large, short-lived matrix buffers on the heap instead of fresh
/// mmap regions. Batched critic sweeps allocate several megabytes per update
/// and otherwise spend more time in page faults than in arithmetic.
void tune_allocator();

}  // namespace nfwpo
