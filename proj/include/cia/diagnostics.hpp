#pragma once

#include <functional>
#include <mutex>
#include <string>
#include <string_view>
#include <utility>

namespace cia {

// Process-wide sink for non-fatal conditions (ridge fallback, clamped IQR,
// reduced group counts, ...). The default sink discards everything.
class Diagnostics {
 public:
  using Sink = std::function<void(std::string_view)>;

  static void set_sink(Sink sink) {
    std::lock_guard lock(mutex());
    sink_ref() = std::move(sink);
  }

  static void report(std::string_view message) {
    std::lock_guard lock(mutex());
    if (sink_ref()) sink_ref()(message);
  }

 private:
  static std::mutex& mutex() {
    static std::mutex m;
    return m;
  }
  static Sink& sink_ref() {
    static Sink s;
    return s;
  }
};

// Installs a sink for the lifetime of the guard and clears it afterwards.
class ScopedDiagnosticSink {
 public:
  explicit ScopedDiagnosticSink(Diagnostics::Sink sink) { Diagnostics::set_sink(std::move(sink)); }
  ~ScopedDiagnosticSink() { Diagnostics::set_sink(nullptr); }
  ScopedDiagnosticSink(const ScopedDiagnosticSink&) = delete;
  ScopedDiagnosticSink& operator=(const ScopedDiagnosticSink&) = delete;
};

}  // namespace cia
