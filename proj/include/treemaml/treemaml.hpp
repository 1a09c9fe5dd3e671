#pragma once

#include "treemaml/clustering.hpp"
#include "treemaml/errors.hpp"
#include "treemaml/experiment.hpp"
#include "treemaml/meta.hpp"
#include "treemaml/models.hpp"
#include "treemaml/numerics.hpp"
#include "treemaml/random.hpp"
#include "treemaml/tasks.hpp"

namespace treemaml {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace treemaml
