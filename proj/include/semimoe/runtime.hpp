#pragma once

namespace semimoe {

// Raises the glibc mmap/trim thresholds once per process. Training
// allocates and frees ~100 MB of graph buffers per iteration; without
// this every large block round-trips through mmap/munmap and the page
// faults roughly double the step time.
void tune_allocator();

}  // namespace semimoe
