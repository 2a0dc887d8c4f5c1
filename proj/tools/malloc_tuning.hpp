#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace nafrssr::cli {

// Feature maps are allocated and freed every pass. Keeping them on the heap
// instead of fresh mmap pages removes most of the kernel time in training.
inline void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace nafrssr::cli
