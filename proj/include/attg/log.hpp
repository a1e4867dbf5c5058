#pragma once

#include <functional>
#include <string>

namespace attg {

using WarningSink = std::function<void(const std::string&)>;

// Emits a warning through the installed sink (stderr by default).
void warn(const std::string& message);

// Installs a new sink and returns the previous one.
WarningSink set_warning_sink(WarningSink sink);

// Restores the previous sink on destruction; handy for capturing warnings in tests.
class ScopedWarningSink {
 public:
  explicit ScopedWarningSink(WarningSink sink) : previous_(set_warning_sink(std::move(sink))) {}
  ~ScopedWarningSink() { set_warning_sink(std::move(previous_)); }
  ScopedWarningSink(const ScopedWarningSink&) = delete;
  ScopedWarningSink& operator=(const ScopedWarningSink&) = delete;

 private:
  WarningSink previous_;
};

}  // namespace attg
