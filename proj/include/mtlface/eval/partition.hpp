#pragma once

namespace mtlface {

inline constexpr int kNumAgeGroups = 7;

/// Groups: 10-, 11-20, 21-30, 31-40, 41-50, 51-60, 61+. Each interval is
/// closed above, so 10 -> 0 and 10.5 -> 1. Negative ages are rejected.
int age_to_group(double age);

/// Interval midpoint; 5 for the first group and 65 for the open last group.
double representative_age(int group);

/// Whether `age` falls in `group`'s interval.
bool age_in_group(double age, int group);

}  // namespace mtlface
