// Copyright 2026 The APDT Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <vector>

#include "apdt/types.hpp"

namespace apdt {

void validate(const MobilityParams& p);

/// One Gauss-Markov update: vel' = a*vel + (1-a)*mean_vel + sqrt(1-a^2)*w,
/// then pos' = pos + vel'*delta with reflection at the area walls. AoI is
/// left untouched.
UserRecord gm_step(const UserRecord& user, const MobilityParams& p, const EnvConfig& cfg,
                   Rng& rng);

/// A new user at a uniform position with a uniform heading at mean_speed.
UserRecord spawn_user(std::int64_t id, std::int64_t aoi, const MobilityParams& p,
                      const EnvConfig& cfg, Rng& rng);

/// Independent departures with departure_prob, then Poisson(arrival_rate)
/// arrivals. Arrivals take AoI max(1, round(avg_aoi_now)) and consume ids
/// from next_id.
std::vector<UserRecord> arrivals_departures(std::vector<UserRecord> users,
                                            const MobilityParams& p, double avg_aoi_now,
                                            const EnvConfig& cfg, Rng& rng,
                                            std::int64_t& next_id);

/// AoI assigned to an arriving user.
std::int64_t arrival_aoi(double avg_aoi_now);

/// Birth-death parameters whose stationary mean user count is rho.
MobilityParams calibrate_density(double rho, double departure_prob = 0.02,
                                 const MobilityParams& base = {});

/// Frozen user set: no arrivals, no departures.
MobilityParams fixed_population(const MobilityParams& base = {});

}  // namespace apdt
