#include "mtlface/eval/partition.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mtlface {

int age_to_group(double age) {
  if (!(age >= 0.0) || std::isinf(age))
    throw std::invalid_argument("age must be finite and non-negative, got " + std::to_string(age));
  if (age <= 10.0) return 0;
  const int g = static_cast<int>(std::ceil(age / 10.0)) - 1;
  return g >= kNumAgeGroups - 1 ? kNumAgeGroups - 1 : g;
}

double representative_age(int group) {
  if (group < 0 || group >= kNumAgeGroups)
    throw std::out_of_range("age group " + std::to_string(group) + " out of range");
  if (group == 0) return 5.0;
  if (group == kNumAgeGroups - 1) return 65.0;
  return 10.0 * group + 5.5;
}

bool age_in_group(double age, int group) { return age >= 0.0 && age_to_group(age) == group; }

}  // namespace mtlface
