#include "spanner/errors.hpp"

#include <iostream>
#include <utility>

namespace spanner {
namespace {

WarningSink& sink_slot() {
  static WarningSink sink = [](std::string_view msg) {
    std::cerr << "warning: " << msg << '\n';
  };
  return sink;
}

}  // namespace

WarningSink set_warning_sink(WarningSink sink) {
  return std::exchange(sink_slot(), std::move(sink));
}

void warn(std::string_view message) {
  if (auto& sink = sink_slot()) sink(message);
}

}  // namespace spanner
