/* Copyright 2026 The attkws Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Umbrella header for the whole library.

#pragma once

#include "attkws/attention_svg.hpp"
#include "attkws/audio.hpp"
#include "attkws/autodiff.hpp"
#include "attkws/dataset.hpp"
#include "attkws/dsp.hpp"
#include "attkws/errors.hpp"
#include "attkws/evaluation.hpp"
#include "attkws/io_util.hpp"
#include "attkws/model.hpp"
#include "attkws/rng.hpp"
#include "attkws/tensor.hpp"
#include "attkws/training.hpp"
