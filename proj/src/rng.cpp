#include "ddaebm/rng.hpp"

#include <sstream>
#include <stdexcept>

namespace ddaebm {

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_ << ' ' << normal_;
  return os.str();
}

Rng Rng::deserialize(const std::string& state) {
  Rng r;
  std::istringstream is(state);
  is >> r.engine_ >> r.normal_;
  if (!is) throw std::invalid_argument("corrupt random stream state");
  return r;
}

}  // namespace ddaebm
