import init, { OcdExplorer, triplet_counts, harmonic_mean } from "./pkg/ocd_cvae_web.js";

const $ = (id) => document.getElementById(id);
const palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];
let explorer = null;

function bounds(arrays) {
  let [x0, x1, y0, y1] = [Infinity, -Infinity, Infinity, -Infinity];
  for (const a of arrays) {
    for (let i = 0; i < a.length; i += 2) {
      x0 = Math.min(x0, a[i]); x1 = Math.max(x1, a[i]);
      y0 = Math.min(y0, a[i + 1]); y1 = Math.max(y1, a[i + 1]);
    }
  }
  const px = (x1 - x0) * 0.05 || 1, py = (y1 - y0) * 0.05 || 1;
  return [x0 - px, x1 + px, y0 - py, y1 + py];
}

function draw(pts) {
  const cv = $("plot"), ctx = cv.getContext("2d");
  ctx.clearRect(0, 0, cv.width, cv.height);
  const layers = [];
  if ($("show-real").checked) layers.push([pts.real, pts.real_labels, "dot"]);
  if ($("show-plain").checked) layers.push([pts.plain, pts.labels, "plus"]);
  if ($("show-ocd").checked) layers.push([pts.ocd, pts.labels, "cross"]);
  if (!layers.length) return;
  const [x0, x1, y0, y1] = bounds(layers.map((l) => l[0]));
  const sx = (x) => ((x - x0) / (x1 - x0)) * cv.width;
  const sy = (y) => cv.height - ((y - y0) / (y1 - y0)) * cv.height;
  for (const [xy, labels, mark] of layers) {
    for (let i = 0; i < labels.length; i++) {
      const x = sx(xy[2 * i]), y = sy(xy[2 * i + 1]);
      ctx.strokeStyle = ctx.fillStyle = palette[labels[i] % palette.length];
      ctx.beginPath();
      if (mark === "dot") {
        ctx.globalAlpha = 0.35;
        ctx.arc(x, y, 2.5, 0, 2 * Math.PI);
        ctx.fill();
      } else if (mark === "plus") {
        ctx.globalAlpha = 0.8;
        ctx.moveTo(x - 3, y); ctx.lineTo(x + 3, y); ctx.moveTo(x, y - 3); ctx.lineTo(x, y + 3);
        ctx.stroke();
      } else {
        ctx.globalAlpha = 0.8;
        ctx.moveTo(x - 3, y - 3); ctx.lineTo(x + 3, y + 3); ctx.moveTo(x - 3, y + 3); ctx.lineTo(x + 3, y - 3);
        ctx.stroke();
      }
    }
  }
  ctx.globalAlpha = 1;
}

function resample() {
  if (!explorer) return;
  const sigma = Number($("sigma").value), sigmaPrime = Number($("sigma-prime").value);
  $("sigma-v").value = sigma.toFixed(2);
  $("sigma-prime-v").value = sigmaPrime.toFixed(2);
  try {
    draw(explorer.sample(sigma, sigmaPrime, Number($("per-class").value), BigInt($("seed").value)));
    $("sample-status").value = "";
  } catch (e) {
    $("sample-status").value = String(e);
  }
}

function train() {
  $("train-status").value = "training…";
  setTimeout(() => {
    try {
      explorer?.free();
      explorer = new OcdExplorer(Number($("classes").value), Number($("epochs").value), BigInt($("seed").value));
      const [recon, kl] = explorer.final_loss();
      $("train-status").value = `final recon ${recon.toFixed(3)}, KL ${kl.toFixed(3)}`;
      resample();
    } catch (e) {
      $("train-status").value = String(e);
    }
  }, 10);
}

function count() {
  try {
    const [hard, all] = triplet_counts(Number($("t-classes").value), Number($("t-per").value));
    $("t-out").value = `hardest negative: ${hard} triplets, all valid: ${all} triplets`;
  } catch (e) {
    $("t-out").value = String(e);
  }
}

function harmonic() {
  try {
    $("h-out").value = harmonic_mean(Number($("h-a").value), Number($("h-b").value)).toFixed(2);
  } catch (e) {
    $("h-out").value = String(e);
  }
}

await init();
$("train").addEventListener("click", train);
for (const id of ["sigma", "sigma-prime", "per-class", "show-real", "show-plain", "show-ocd"]) {
  $(id).addEventListener("input", resample);
}
$("count").addEventListener("click", count);
$("h-a").addEventListener("input", harmonic);
$("h-b").addEventListener("input", harmonic);
count();
harmonic();
train();
