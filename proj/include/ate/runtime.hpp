#pragma once

namespace ate {

// Keeps large matrix buffers on the heap between training steps instead of
// returning them to the kernel after every tape. Call once at startup.
void tune_allocator();

}  // namespace ate
