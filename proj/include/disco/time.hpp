#pragma once

#include <cstdint>

namespace disco {

// Milliseconds; logical in the simulator, steady-clock in live processes.
using TimeMs = std::int64_t;

// Transport-level connection handle assigned by whoever drives a state machine.
using ConnId = std::uint64_t;

}  // namespace disco
