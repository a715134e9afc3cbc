#include "vdi/hidden_state.hpp"

#include <cmath>

namespace vdi {

void HiddenState::validate() const {
  const float* p = values.data();
  for (std::size_t k = 0; k < scalar_count(); ++k) {
    if (!std::isfinite(p[k])) {
      throw NonFiniteScalar("non-finite scalar at offset " + std::to_string(k));
    }
  }
}

}  // namespace vdi
