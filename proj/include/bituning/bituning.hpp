/*
 * Copyright 2026 The bituning Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "bituning/checkpoint.hpp"
#include "bituning/config.hpp"
#include "bituning/data.hpp"
#include "bituning/error.hpp"
#include "bituning/experiments.hpp"
#include "bituning/gradcheck.hpp"
#include "bituning/keypool.hpp"
#include "bituning/losses.hpp"
#include "bituning/model.hpp"
#include "bituning/optimizer.hpp"
#include "bituning/tape.hpp"
#include "bituning/tensor.hpp"
#include "bituning/trainer.hpp"
