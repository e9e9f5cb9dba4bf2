#include <fcntl.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <mutex>

#include "trafsim/errors.hpp"
#include "trafsim/sync.hpp"

namespace trafsim {

namespace {

// Like std::barrier, but a failing participant can release everyone with an error.
class AbortableBarrier {
 public:
  explicit AbortableBarrier(int n) : n_(n) {}

  void arrive_and_wait() {
    std::unique_lock lk(m_);
    if (aborted_) throw failure();
    const auto gen = gen_;
    if (++waiting_ == n_) {
      waiting_ = 0;
      ++gen_;
      cv_.notify_all();
      return;
    }
    cv_.wait(lk, [&] { return gen_ != gen || aborted_; });
    if (gen_ == gen) throw failure();
  }

  void abort(int who) {
    std::lock_guard lk(m_);
    if (!aborted_) culprit_ = who;
    aborted_ = true;
    cv_.notify_all();
  }

 private:
  TransportError failure() const {
    return TransportError("exchange aborted: partition " + std::to_string(culprit_) + " failed");
  }

  std::mutex m_;
  std::condition_variable cv_;
  int n_;
  int waiting_ = 0;
  std::uint64_t gen_ = 0;
  bool aborted_ = false;
  int culprit_ = -1;
};

class InProcessTransport final : public Transport {
 public:
  explicit InProcessTransport(int k) : k_(k), slots_(static_cast<std::size_t>(k) * k), barrier_(k) {}

  int size() const override { return k_; }

  std::vector<std::vector<std::uint8_t>> exchange(int self, std::vector<std::vector<std::uint8_t>> outbound) override {
    for (int to = 0; to < k_; ++to) {
      if (to != self) slots_[slot(self, to)] = std::move(outbound[to]);
    }
    barrier_.arrive_and_wait();
    std::vector<std::vector<std::uint8_t>> in(k_);
    for (int from = 0; from < k_; ++from) {
      if (from != self) in[from] = std::move(slots_[slot(from, self)]);
    }
    // nobody may overwrite a slot before its reader has taken it
    barrier_.arrive_and_wait();
    return in;
  }

  void abort(int self) override { barrier_.abort(self); }

 private:
  std::size_t slot(int from, int to) const { return static_cast<std::size_t>(from) * k_ + to; }

  int k_;
  std::vector<std::vector<std::uint8_t>> slots_;
  AbortableBarrier barrier_;
};

class SocketTransport final : public Transport {
 public:
  explicit SocketTransport(int k) : k_(k), fd_(static_cast<std::size_t>(k) * k, -1), rx_(fd_.size()) {
    for (int i = 0; i < k; ++i) {
      for (int j = i + 1; j < k; ++j) {
        int sv[2];
        if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0) {
          const int err = errno;
          close_all();
          throw TransportError("socketpair for partitions " + std::to_string(i) + "," + std::to_string(j) + ": " +
                               std::strerror(err));
        }
        for (int fd : sv) ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) | O_NONBLOCK);
        fd_[at(i, j)] = sv[0];
        fd_[at(j, i)] = sv[1];
      }
    }
  }

  ~SocketTransport() override { close_all(); }

  int size() const override { return k_; }

  std::vector<std::vector<std::uint8_t>> exchange(int self, std::vector<std::vector<std::uint8_t>> outbound) override {
    std::vector<std::vector<std::uint8_t>> tx(k_);
    std::vector<std::size_t> sent(k_, 0);
    for (int p = 0; p < k_; ++p) {
      if (p == self) continue;
      const auto n = static_cast<std::uint32_t>(outbound[p].size());
      auto& frame = tx[p];
      frame.reserve(4 + n);
      for (int b = 0; b < 4; ++b) frame.push_back(static_cast<std::uint8_t>(n >> (8 * b)));
      frame.insert(frame.end(), outbound[p].begin(), outbound[p].end());
    }
    std::vector<pollfd> fds;
    std::vector<int> peer_of;
    std::uint8_t buf[65536];
    while (true) {
      if (aborted_.load()) throw TransportError("partition " + std::to_string(self) + ": exchange aborted by a peer");
      fds.clear();
      peer_of.clear();
      for (int p = 0; p < k_; ++p) {
        if (p == self) continue;
        short events = 0;
        if (sent[p] < tx[p].size()) events |= POLLOUT;
        if (!frame_ready(rx_[at(self, p)])) events |= POLLIN;
        if (events) {
          fds.push_back(pollfd{fd_[at(self, p)], events, 0});
          peer_of.push_back(p);
        }
      }
      if (fds.empty()) break;
      const int rc = ::poll(fds.data(), fds.size(), 200);
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw TransportError("partition " + std::to_string(self) + ": poll failed: " + std::strerror(errno));
      }
      for (std::size_t i = 0; i < fds.size(); ++i) {
        const int p = peer_of[i];
        const int fd = fds[i].fd;
        const auto where = "partition " + std::to_string(self) + " <-> " + std::to_string(p);
        if (fds[i].revents & POLLOUT) {
          const auto n = ::send(fd, tx[p].data() + sent[p], tx[p].size() - sent[p], MSG_NOSIGNAL);
          if (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR) {
            throw TransportError(where + ": send failed: " + std::strerror(errno));
          }
          if (n > 0) sent[p] += static_cast<std::size_t>(n);
        }
        if (fds[i].revents & (POLLIN | POLLHUP | POLLERR)) {
          const auto n = ::recv(fd, buf, sizeof(buf), 0);
          if (n == 0) throw TransportError(where + ": connection closed");
          if (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR) {
            throw TransportError(where + ": receive failed: " + std::strerror(errno));
          }
          if (n > 0) {
            auto& rx = rx_[at(self, p)];
            rx.insert(rx.end(), buf, buf + n);
          }
        }
      }
    }
    std::vector<std::vector<std::uint8_t>> in(k_);
    for (int p = 0; p < k_; ++p) {
      if (p == self) continue;
      auto& rx = rx_[at(self, p)];
      const auto n = frame_length(rx);
      in[p].assign(rx.begin() + 4, rx.begin() + 4 + static_cast<std::ptrdiff_t>(n));
      rx.erase(rx.begin(), rx.begin() + 4 + static_cast<std::ptrdiff_t>(n));
    }
    return in;
  }

  void abort(int self) override {
    aborted_.store(true);
    for (int p = 0; p < k_; ++p) {
      if (p != self && fd_[at(self, p)] >= 0) ::shutdown(fd_[at(self, p)], SHUT_RDWR);
    }
  }

 private:
  std::size_t at(int self, int peer) const { return static_cast<std::size_t>(self) * k_ + peer; }

  static std::size_t frame_length(const std::vector<std::uint8_t>& rx) {
    std::uint32_t n = 0;
    for (int b = 0; b < 4; ++b) n |= static_cast<std::uint32_t>(rx[b]) << (8 * b);
    return n;
  }
  static bool frame_ready(const std::vector<std::uint8_t>& rx) {
    return rx.size() >= 4 && rx.size() >= 4 + frame_length(rx);
  }

  void close_all() {
    for (int& fd : fd_) {
      if (fd >= 0) ::close(fd);
      fd = -1;
    }
  }

  int k_;
  std::vector<int> fd_;                      // fd_[self * k + peer]: self's end towards peer
  std::vector<std::vector<std::uint8_t>> rx_;  // bytes received but not yet consumed
  std::atomic<bool> aborted_{false};
};

}  // namespace

std::unique_ptr<Transport> make_in_process_transport(int k) { return std::make_unique<InProcessTransport>(k); }

std::unique_ptr<Transport> make_socket_transport(int k) { return std::make_unique<SocketTransport>(k); }

}  // namespace trafsim
