#include "process.hpp"

#include <fcntl.h>
#include <linux/landlock.h>
#include <poll.h>
#include <sched.h>
#include <signal.h>
#include <sys/prctl.h>
#include <sys/resource.h>
#include <sys/syscall.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <thread>

namespace forge::sandbox::detail {

namespace {

// The system header predates the network rules; the kernel accepts the
// larger attribute when it supports ABI 4.
struct RulesetAttr {
  __u64 handled_access_fs;
  __u64 handled_access_net;
};
constexpr rlim_t kMaxFileBytes = rlim_t{256} << 20;

constexpr __u64 kAccessFsRefer = 1ULL << 13;     // ABI 2
constexpr __u64 kAccessFsTruncate = 1ULL << 14;  // ABI 3
constexpr __u64 kAccessNetBindTcp = 1ULL << 0;
constexpr __u64 kAccessNetConnectTcp = 1ULL << 1;

constexpr __u64 kWriteAccess =
    LANDLOCK_ACCESS_FS_WRITE_FILE | LANDLOCK_ACCESS_FS_REMOVE_DIR | LANDLOCK_ACCESS_FS_REMOVE_FILE |
    LANDLOCK_ACCESS_FS_MAKE_CHAR | LANDLOCK_ACCESS_FS_MAKE_DIR | LANDLOCK_ACCESS_FS_MAKE_REG |
    LANDLOCK_ACCESS_FS_MAKE_SOCK | LANDLOCK_ACCESS_FS_MAKE_FIFO | LANDLOCK_ACCESS_FS_MAKE_BLOCK |
    LANDLOCK_ACCESS_FS_MAKE_SYM;

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    reset();
    fd_ = std::exchange(o.fd_, -1);
    return *this;
  }
  ~Fd() { reset(); }
  int get() const { return fd_; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

struct Pipe {
  Fd read;
  Fd write;
};

Pipe make_pipe() {
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) return {};
  return {Fd(fds[0]), Fd(fds[1])};
}

int add_path_rule(int ruleset, const std::filesystem::path& path, __u64 access) {
  int fd = ::open(path.c_str(), O_PATH | O_CLOEXEC);
  if (fd < 0) return -1;
  landlock_path_beneath_attr attr{};
  attr.allowed_access = access;
  attr.parent_fd = fd;
  int rc = static_cast<int>(::syscall(SYS_landlock_add_rule, ruleset, LANDLOCK_RULE_PATH_BENEATH, &attr, 0));
  ::close(fd);
  return rc;
}

// Built in the parent so the child only has to call restrict_self.
Fd make_ruleset(int abi, const std::filesystem::path& writable) {
  __u64 fs_access = kWriteAccess;
  if (abi >= 2) fs_access |= kAccessFsRefer;
  if (abi >= 3) fs_access |= kAccessFsTruncate;
  RulesetAttr attr{fs_access, 0};
  size_t size = sizeof(__u64);
  if (abi >= 4) {
    attr.handled_access_net = kAccessNetBindTcp | kAccessNetConnectTcp;
    size = sizeof(RulesetAttr);
  }
  int fd = static_cast<int>(::syscall(SYS_landlock_create_ruleset, &attr, size, 0));
  if (fd < 0) return Fd();
  Fd ruleset(fd);
  if (add_path_rule(fd, writable, fs_access) != 0) return Fd();
  // Character devices such as /dev/null stay writable.
  add_path_rule(fd, "/dev", LANDLOCK_ACCESS_FS_WRITE_FILE);
  return ruleset;
}

std::vector<char*> to_cargv(std::vector<std::string>& v) {
  std::vector<char*> out;
  out.reserve(v.size() + 1);
  for (auto& s : v) out.push_back(s.data());
  out.push_back(nullptr);
  return out;
}

[[noreturn]] void child_fail(int err_fd, const char* what) {
  int e = errno;
  char buf[256];
  int n = snprintf(buf, sizeof(buf), "%s: %s", what, strerror(e));
  if (n > 0) {
    ssize_t ignored = ::write(err_fd, buf, static_cast<size_t>(n));
    (void)ignored;
  }
  _exit(127);
}

void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) | O_NONBLOCK); }

}  // namespace

int landlock_abi() {
  long abi = ::syscall(SYS_landlock_create_ruleset, nullptr, 0, LANDLOCK_CREATE_RULESET_VERSION);
  return abi < 0 ? 0 : static_cast<int>(abi);
}

bool network_namespace_available() {
  pid_t pid = ::fork();
  if (pid < 0) return false;
  if (pid == 0) _exit(::unshare(CLONE_NEWNET) == 0 ? 0 : 1);
  int status = 0;
  ::waitpid(pid, &status, 0);
  return WIFEXITED(status) && WEXITSTATUS(status) == 0;
}

ProcessResult run_process(const ProcessSpec& spec) {
  ProcessResult result;
  if (spec.argv.empty()) {
    result.spawn_error = "empty command";
    return result;
  }
  std::vector<std::string> argv_store = spec.argv;
  std::vector<std::string> env_store = spec.env;
  auto argv = to_cargv(argv_store);
  auto envp = to_cargv(env_store);

  Pipe in = make_pipe(), out = make_pipe(), err = make_pipe(), status = make_pipe();
  if (in.read.get() < 0 || out.read.get() < 0 || err.read.get() < 0 || status.read.get() < 0) {
    result.spawn_error = std::string("pipe: ") + strerror(errno);
    return result;
  }
  Fd ruleset;
  if (spec.landlock_abi > 0) ruleset = make_ruleset(spec.landlock_abi, spec.writable_dir);

  const auto start = std::chrono::steady_clock::now();
  // CPU time backs up the wall-clock deadline in case the parent stalls.
  const rlim_t cpu_seconds = static_cast<rlim_t>(std::ceil(spec.timeout.count())) + 1;
  pid_t pid = ::fork();
  if (pid < 0) {
    result.spawn_error = std::string("fork: ") + strerror(errno);
    return result;
  }
  if (pid == 0) {
    // Child: only async-signal-safe calls from here to execve.
    ::setpgid(0, 0);
    int err_fd = status.write.get();
    if (::dup2(in.read.get(), STDIN_FILENO) < 0) child_fail(err_fd, "dup2 stdin");
    if (::dup2(out.write.get(), STDOUT_FILENO) < 0) child_fail(err_fd, "dup2 stdout");
    if (::dup2(spec.merge_stderr ? out.write.get() : err.write.get(), STDERR_FILENO) < 0) {
      child_fail(err_fd, "dup2 stderr");
    }
    if (::chdir(spec.cwd.c_str()) != 0) child_fail(err_fd, "chdir");
    rlimit core{0, 0};
    ::setrlimit(RLIMIT_CORE, &core);
    rlimit cpu{cpu_seconds, cpu_seconds};
    ::setrlimit(RLIMIT_CPU, &cpu);
    rlimit fsize{kMaxFileBytes, kMaxFileBytes};
    ::setrlimit(RLIMIT_FSIZE, &fsize);
    if (spec.address_space) {
      rlimit as{*spec.address_space, *spec.address_space};
      if (::setrlimit(RLIMIT_AS, &as) != 0) child_fail(err_fd, "setrlimit");
    }
    if (spec.isolate_network && ::unshare(CLONE_NEWNET) != 0) child_fail(err_fd, "unshare");
    if (ruleset.get() >= 0) {
      if (::prctl(PR_SET_NO_NEW_PRIVS, 1, 0, 0, 0) != 0) child_fail(err_fd, "no_new_privs");
      if (::syscall(SYS_landlock_restrict_self, ruleset.get(), 0) != 0) child_fail(err_fd, "landlock");
    }
    ::execve(argv[0], argv.data(), envp.data());
    child_fail(err_fd, "execve");
  }

  ruleset.reset();
  in.read.reset();
  out.write.reset();
  err.write.reset();
  status.write.reset();

  // execve succeeded iff the CLOEXEC status pipe closes without data.
  {
    char buf[256];
    ssize_t n;
    do {
      n = ::read(status.read.get(), buf, sizeof(buf));
    } while (n < 0 && errno == EINTR);
    if (n > 0) {
      result.spawn_error.assign(buf, static_cast<size_t>(n));
      int st;
      ::waitpid(pid, &st, 0);
      return result;
    }
  }
  result.spawned = true;

  set_nonblocking(in.write.get());
  set_nonblocking(out.read.get());
  set_nonblocking(err.read.get());
  if (spec.stdin_data.empty()) in.write.reset();

  const auto deadline = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(spec.timeout);
  size_t stdin_written = 0;
  bool killed = false;
  auto kill_group = [&] {
    if (!killed) {
      ::kill(-pid, SIGKILL);
      killed = true;
    }
  };

  char buf[1 << 16];
  int wstatus = 0;
  bool reaped = false;
  while (out.read.get() >= 0 || err.read.get() >= 0) {
    auto now = std::chrono::steady_clock::now();
    if (now >= deadline) {
      result.timed_out = true;
      kill_group();
      break;
    }
    pollfd fds[3];
    int nfds = 0;
    int out_idx = -1, err_idx = -1, in_idx = -1;
    if (out.read.get() >= 0) {
      out_idx = nfds;
      fds[nfds++] = {out.read.get(), POLLIN, 0};
    }
    if (err.read.get() >= 0) {
      err_idx = nfds;
      fds[nfds++] = {err.read.get(), POLLIN, 0};
    }
    if (in.write.get() >= 0) {
      in_idx = nfds;
      fds[nfds++] = {in.write.get(), POLLOUT, 0};
    }
    // Short polls so a leader that exits while a detached child still holds
    // the pipes open is noticed.
    int wait_ms = std::min<int>(
        20, static_cast<int>(std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count()) + 1);
    int rc = ::poll(fds, static_cast<nfds_t>(nfds), wait_ms);
    if (rc < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (in_idx >= 0 && (fds[in_idx].revents & (POLLOUT | POLLERR | POLLHUP))) {
      ssize_t n = ::write(in.write.get(), spec.stdin_data.data() + stdin_written,
                          spec.stdin_data.size() - stdin_written);
      if (n > 0) stdin_written += static_cast<size_t>(n);
      if (n < 0 && errno != EAGAIN) in.write.reset();  // reader gone
      if (stdin_written == spec.stdin_data.size()) in.write.reset();
    }
    auto drain = [&](int idx, Fd& fd, std::string& sink, size_t limit, bool is_stdout) {
      if (idx < 0 || !(fds[idx].revents & (POLLIN | POLLHUP | POLLERR))) return;
      ssize_t n = ::read(fd.get(), buf, sizeof(buf));
      if (n == 0 || (n < 0 && errno != EAGAIN && errno != EINTR)) {
        fd.reset();
        return;
      }
      if (n < 0) return;
      size_t room = limit > sink.size() ? limit - sink.size() : 0;
      sink.append(buf, std::min(room, static_cast<size_t>(n)));
      if (static_cast<size_t>(n) > room && is_stdout) {
        result.output_exceeded = true;
        kill_group();
        fd.reset();
      }
    };
    drain(out_idx, out.read, result.out, spec.stdout_limit, true);
    if (result.output_exceeded) break;
    drain(err_idx, err.read, result.err, spec.stderr_limit, false);
    if (!reaped && ::waitpid(pid, &wstatus, WNOHANG) == pid) {
      reaped = true;
      kill_group();  // stragglers die, so the pipes reach EOF
    }
  }
  in.write.reset();

  // Output closed; the process may still be running (it could have closed
  // its stdout). Give it until the deadline.
  while (!reaped) {
    pid_t w = ::waitpid(pid, &wstatus, killed ? 0 : WNOHANG);
    if (w == pid) reaped = true;
    if (reaped || (w < 0 && errno != EINTR)) break;
    if (std::chrono::steady_clock::now() >= deadline) {
      result.timed_out = true;
      kill_group();
      continue;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
  // Reap any stragglers left in the process group.
  ::kill(-pid, SIGKILL);
  result.duration = std::chrono::steady_clock::now() - start;
  if (WIFEXITED(wstatus)) {
    result.exit_code = WEXITSTATUS(wstatus);
  } else if (WIFSIGNALED(wstatus)) {
    result.term_signal = WTERMSIG(wstatus);
  }
  return result;
}

}  // namespace forge::sandbox::detail
