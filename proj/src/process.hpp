#pragma once

// Fork/exec of one command with a wall-clock deadline, captured output and
// optional confinement. Internal to the sandbox.

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace forge::sandbox::detail {

struct ProcessSpec {
  std::vector<std::string> argv;  // argv[0] already resolved to a path
  std::vector<std::string> env;   // KEY=VALUE
  std::filesystem::path cwd;
  std::string stdin_data;
  std::chrono::duration<double> timeout{10.0};
  std::size_t stdout_limit = 16u << 20;
  std::size_t stderr_limit = 64u << 10;
  std::optional<std::size_t> address_space;
  bool merge_stderr = false;
  bool isolate_network = false;
  /// Landlock ABI to use (0 disables); writes are confined to writable_dir.
  int landlock_abi = 0;
  std::filesystem::path writable_dir;
};

struct ProcessResult {
  bool spawned = false;
  std::string spawn_error;
  bool timed_out = false;
  bool output_exceeded = false;
  int exit_code = -1;
  int term_signal = 0;
  std::string out;
  std::string err;
  std::chrono::duration<double> duration{0};

  bool clean_exit() const {
    return spawned && !timed_out && !output_exceeded && term_signal == 0 && exit_code == 0;
  }
};

ProcessResult run_process(const ProcessSpec& spec);

/// Highest Landlock ABI the kernel supports, 0 if none.
int landlock_abi();

/// Whether a child can move into a fresh network namespace.
bool network_namespace_available();

}  // namespace forge::sandbox::detail
