/*
 * Copyright 2026 The ivit Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <map>
#include <string>

#include "ivit/error.hpp"
#include "ivit/numerics/grad_check.hpp"

namespace ivit {

enum class FreezePolicy {
  pretrain,              // standard ViT: interaction queries and gate maps frozen
  interaction_finetune,  // only interaction queries, gate maps and task head train
  end_to_end,            // everything trains
};

inline std::string to_string(FreezePolicy p) {
  switch (p) {
    case FreezePolicy::pretrain: return "pretrain";
    case FreezePolicy::interaction_finetune: return "interaction-finetune";
    case FreezePolicy::end_to_end: return "end-to-end";
  }
  return "?";
}

inline FreezePolicy parse_freeze_policy(const std::string& s) {
  if (s == "pretrain") return FreezePolicy::pretrain;
  if (s == "interaction-finetune") return FreezePolicy::interaction_finetune;
  if (s == "end-to-end") return FreezePolicy::end_to_end;
  throw ValidationError("unknown freeze policy '" + s +
                        "' (expected pretrain, interaction-finetune or end-to-end)");
}

inline bool is_interaction_param(const std::string& name) {
  return name.ends_with(".attn.w_iq") || name.find(".gate.") != std::string::npos;
}

inline bool is_head_param(const std::string& name) { return name.starts_with("head."); }

// Trainable flag per parameter name.
using TrainableMask = std::map<std::string, bool>;

template <class T>
TrainableMask freeze_mask(const ParameterMap<T>& params, FreezePolicy policy) {
  TrainableMask mask;
  for (const auto& [name, value] : params) {
    switch (policy) {
      case FreezePolicy::pretrain: mask[name] = !is_interaction_param(name); break;
      case FreezePolicy::interaction_finetune:
        mask[name] = is_interaction_param(name) || is_head_param(name);
        break;
      case FreezePolicy::end_to_end: mask[name] = true; break;
    }
  }
  return mask;
}

}  // namespace ivit
