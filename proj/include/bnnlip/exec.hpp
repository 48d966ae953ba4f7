// Copyright 2026 The bnnlip Authors
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

namespace bnnlip {

/// Execution policy for the data-parallel kernels. Every kernel produces
/// bit-identical output under both policies and any OpenMP thread count:
/// parallel paths write per-item results and reduce in a fixed order (or use
/// exact max reductions with lexicographic tie-breaks).
enum class Exec { serial, parallel };

} // namespace bnnlip
