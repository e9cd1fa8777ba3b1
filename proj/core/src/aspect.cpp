#include "zstc/aspect.hpp"

#include "zstc/error.hpp"

namespace zstc {

std::string_view to_string(Aspect a) {
  switch (a) {
    case Aspect::sentiment: return "sentiment";
    case Aspect::intent: return "intent";
    case Aspect::topic: return "topic";
  }
  return "unknown";
}

Aspect parse_aspect(std::string_view name) {
  for (Aspect a : kAllAspects)
    if (to_string(a) == name) return a;
  throw DataError("unknown aspect '" + std::string(name) + "'");
}

std::string_view to_string(Split s) { return s == Split::in_domain ? "in" : "out"; }

Split parse_split(std::string_view name) {
  if (name == "in") return Split::in_domain;
  if (name == "out") return Split::out_of_domain;
  throw DataError("unknown split '" + std::string(name) + "' (expected in|out)");
}

std::string_view to_string(Partition p) { return p == Partition::train ? "train" : "test"; }

Partition parse_partition(std::string_view name) {
  if (name == "train") return Partition::train;
  if (name == "test") return Partition::test;
  throw DataError("unknown partition '" + std::string(name) + "' (expected train|test)");
}

}  // namespace zstc
