import init, { synth_trace, resample_spectra, detect_states } from "./pkg/swd_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function show(prefix, fn) {
  try {
    const res = JSON.parse(fn());
    $(prefix + "-out").innerHTML = res.svg;
    delete res.svg;
    $(prefix + "-info").textContent = JSON.stringify(res, null, 2);
    return res;
  } catch (e) {
    $(prefix + "-out").innerHTML = "";
    $(prefix + "-info").innerHTML = `<span class="err">${e.message ?? e}</span>`;
    return null;
  }
}

function trace() {
  return show("t", () => synth_trace(num("t-seed"), num("t-dur"), num("t-start"), num("t-win")));
}

await init();
$("t-go").onclick = trace;
$("t-swd").onclick = () => {
  const res = trace();
  if (res && res.first_swd_s !== null) {
    $("t-start").value = Math.max(0, Math.floor(res.first_swd_s - 5));
    trace();
  }
};
$("r-go").onclick = () => show("r", () => resample_spectra(num("r-src"), num("r-dst"), num("r-tone")));
$("s-go").onclick = () => show("s", () => detect_states(num("s-seed"), num("s-dur")));
trace();
