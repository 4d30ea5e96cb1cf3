// Copyright 2026 The IPLT Authors
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

//! Structured filter pruning for small CNNs: incremental pruning during
//! early training and a pretrain-then-prune baseline, with exact filter,
//! parameter and MAC accounting.

pub mod data;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod pruner;
pub mod tensor;
pub mod train;
