#pragma once

// Everything except the network clients (kultur/http_clients.hpp), which
// pull in cpp-httplib.

#include "kultur/eval.hpp"
#include "kultur/gateway.hpp"
#include "kultur/ids.hpp"
#include "kultur/images.hpp"
#include "kultur/kg.hpp"
#include "kultur/line_reader.hpp"
#include "kultur/pipeline.hpp"
#include "kultur/prompts.hpp"
#include "kultur/qa.hpp"
#include "kultur/random.hpp"
#include "kultur/records.hpp"
#include "kultur/responses.hpp"
#include "kultur/sampling.hpp"
#include "kultur/scripted_client.hpp"
#include "kultur/select.hpp"
#include "kultur/stats.hpp"
#include "kultur/text.hpp"
