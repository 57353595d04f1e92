#pragma once

#include <cstddef>
#include <functional>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hsim {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyDictionary : public Error {
 public:
  EmptyDictionary() : Error("dictionary pruning removed every word") {}
};

class NonUniformDepth : public Error {
 public:
  explicit NonUniformDepth(const std::string& leaf)
      : Error("leaf '" + leaf + "' is not at the tree height") {}
};

class DuplicateName : public Error {
 public:
  explicit DuplicateName(const std::string& name)
      : Error("duplicate sibling name '" + name + "'") {}
};

class OutOfRange : public Error {
 public:
  using Error::Error;
};

class UnknownLeaf : public Error {
 public:
  explicit UnknownLeaf(std::string name)
      : Error("unknown leaf '" + name + "'"), name_(std::move(name)) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

class InsufficientData : public Error {
 public:
  using Error::Error;
};

class EmptyCluster : public Error {
 public:
  EmptyCluster(std::size_t level, std::size_t index)
      : Error("cluster (level " + std::to_string(level + 1) + ", index " +
              std::to_string(index + 1) + ") has no member documents"),
        level_(level),
        index_(index) {}
  std::size_t level() const { return level_; }
  std::size_t index() const { return index_; }

 private:
  std::size_t level_;
  std::size_t index_;
};

class QpNotConverged : public Error {
 public:
  explicit QpNotConverged(double residual)
      : Error("theta QP did not reach the KKT tolerance, residual " +
              std::to_string(residual)),
        residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

class SingularPrecision : public Error {
 public:
  using Error::Error;
};

class IoFailure : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

namespace log {

using Sink = std::function<void(const std::string&)>;

namespace detail {
inline std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}
inline Sink& sink() {
  static Sink s = [](const std::string& msg) {
    std::clog << "[hsim] warning: " << msg << '\n';
  };
  return s;
}
inline int& mute_depth() {
  thread_local int depth = 0;
  return depth;
}
}  // namespace detail

/// Replaces the warning sink; returns the previous one.
inline Sink set_sink(Sink s) {
  std::lock_guard lock(detail::sink_mutex());
  return std::exchange(detail::sink(), std::move(s));
}

/// Emits a warning even inside a ScopedMute.
inline void warn_unmuted(const std::string& msg) {
  std::lock_guard lock(detail::sink_mutex());
  if (detail::sink()) detail::sink()(msg);
}

inline void warn(const std::string& msg) {
  if (detail::mute_depth() > 0) return;
  warn_unmuted(msg);
}

/// Captures warnings for the lifetime of the object.
class ScopedCapture {
 public:
  ScopedCapture()
      : previous_(set_sink([this](const std::string& m) { messages_.push_back(m); })) {}
  ~ScopedCapture() { set_sink(std::move(previous_)); }
  ScopedCapture(const ScopedCapture&) = delete;
  ScopedCapture& operator=(const ScopedCapture&) = delete;

  const std::vector<std::string>& messages() const { return messages_; }

 private:
  std::vector<std::string> messages_;
  Sink previous_;
};

/// Drops warnings raised on the current thread while alive.
class ScopedMute {
 public:
  ScopedMute() { ++detail::mute_depth(); }
  ~ScopedMute() { --detail::mute_depth(); }
  ScopedMute(const ScopedMute&) = delete;
  ScopedMute& operator=(const ScopedMute&) = delete;
};

}  // namespace log
}  // namespace hsim
