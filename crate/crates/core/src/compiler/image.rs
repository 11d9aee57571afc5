//! Fabric images and their on-disk form.
//!
//! An image directory holds:
//!
//! ```text
//! manifest.json    schema tag, network fingerprint, placement, file list
//! network.json     the source network description
//! cluster_XX.cfg   config stream for physical cluster XX
//! group_G.mem      byte-serial weight records for cluster group G
//! routes.txt       multicast table, "<source id> <cluster mask hex>" per line
//! adjacency.txt    flat synapse list for the bus fabric, "<src> <dst> <raw weight>"
//! inputs.txt       input synapses for the bus fabric, "<input> <dst> <raw weight>"
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{place, CompileError, NetworkDescription, Placement, QuantizedNetwork};
use crate::cluster::stream;
use crate::fabric::InitImage;
use crate::fixed::Potential;
use crate::neuron::NeuronConfig;
use crate::noc::MulticastTable;
use crate::packet::{ClusterId, NeuronId, SpikePacket, CLUSTER_GROUPS, NEURONS_PER_CLUSTER, PHYSICAL_CLUSTERS};
use crate::weight_store::{RowAddr, WeightRow, MEMORY_ROWS};

pub const IMAGE_SCHEMA: &str = "cerebra-image/1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageManifest {
    pub schema: String,
    pub network_sha256: String,
    pub layers: Vec<usize>,
    pub placement: Placement,
    pub clusters_used: usize,
    pub groups_used: usize,
    pub rows_per_group: Vec<usize>,
    pub cluster_files: Vec<String>,
    pub memory_files: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timesteps: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Flat view of the same network for the bus-based fabric. Neuron ids are the
/// physical slots of the clustered placement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BaselineImage {
    pub configs: Vec<(u16, NeuronConfig)>,
    /// Nonzero synapses `(src, dst, weight)`, ascending by source then destination.
    pub synapses: Vec<(u16, u16, Potential)>,
    /// Nonzero synapses of every input, ascending by destination.
    pub inputs: Vec<Vec<(u16, Potential)>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FabricImage {
    pub manifest: ImageManifest,
    pub network: NetworkDescription,
    pub quantized: QuantizedNetwork,
    pub init: InitImage,
    pub baseline: BaselineImage,
}

/// Compiles an already placed network.
pub fn emit_image(net: &NetworkDescription, placement: &Placement) -> Result<FabricImage, CompileError> {
    let q = net.quantize()?;
    let mut next_row = [0usize; CLUSTER_GROUPS];
    let mut forwarders: BTreeMap<u8, Vec<(SpikePacket, RowAddr)>> = BTreeMap::new();
    let mut memory: BTreeMap<u8, Vec<u8>> = BTreeMap::new();
    let mut multicast = MulticastTable::new();
    let mut synapses = Vec::new();
    let mut input_synapses = vec![Vec::new(); q.layers[0]];

    for l in 1..q.layers.len() {
        let w = &q.weights[l - 1];
        let mut by_cluster: BTreeMap<u8, Vec<(usize, NeuronId)>> = BTreeMap::new();
        for o in 0..q.layers[l] {
            let (c, n) = placement.slot(l, o);
            by_cluster.entry(c.get()).or_default().push((o, n));
        }
        for i in 0..q.layers[l - 1] {
            let src = if l == 1 { placement.input_packet(i) } else { placement.slot(l - 1, i).into() };
            for (&c, members) in &by_cluster {
                let mut row = WeightRow::ZERO;
                for &(o, n) in members {
                    row.0[n.index()] = w[o][i];
                }
                if row.is_zero() {
                    continue;
                }
                let cluster = ClusterId::new(c).expect("placement uses physical clusters");
                let g = cluster.group();
                if next_row[g] >= MEMORY_ROWS {
                    return Err(CompileError::CapacityExceeded(format!(
                        "cluster group {g} needs more than {MEMORY_ROWS} weight rows"
                    )));
                }
                let addr = RowAddr::new(next_row[g] as u16).expect("checked above");
                next_row[g] += 1;
                memory.entry(g as u8).or_default().extend(row.encode_record(addr));
                forwarders.entry(c).or_default().push((src, addr));
                multicast.add(src.source(), cluster);
            }
            for o in 0..q.layers[l] {
                if w[o][i].is_zero() {
                    continue;
                }
                let dst = placement.layers[l - 1][o];
                if l == 1 {
                    input_synapses[i].push((dst, w[o][i]));
                } else {
                    synapses.push((placement.layers[l - 2][i], dst, w[o][i]));
                }
            }
        }
    }
    synapses.sort_by_key(|&(s, d, _)| (s, d));
    for list in &mut input_synapses {
        list.sort_by_key(|&(d, _)| d);
    }

    let output_layer = q.layers.len() - 1;
    let mut configs = Vec::new();
    let mut cluster_streams: BTreeMap<u8, Vec<u8>> = BTreeMap::new();
    let mut masks: BTreeMap<u8, u32> = BTreeMap::new();
    for l in 1..q.layers.len() {
        for o in 0..q.layers[l] {
            let (c, n) = placement.slot(l, o);
            let cfg = q.configs[l - 1];
            configs.push((placement.layers[l - 1][o], cfg));
            cluster_streams.entry(c.get()).or_default().extend(stream::load_ni(n, &cfg));
            let mask = masks.entry(c.get()).or_default();
            if l != output_layer {
                *mask |= 1 << n.index();
            }
        }
    }
    configs.sort_by_key(|&(id, _)| id);
    for (c, entries) in &forwarders {
        let s = cluster_streams.entry(*c).or_default();
        for &(src, addr) in entries {
            s.extend(stream::load_if(src, addr));
        }
    }
    for (c, mask) in &masks {
        cluster_streams.entry(*c).or_default().extend(stream::load_oe(*mask));
    }

    let manifest = ImageManifest {
        schema: IMAGE_SCHEMA.to_string(),
        network_sha256: net.fingerprint(),
        layers: q.layers.clone(),
        placement: placement.clone(),
        clusters_used: placement.clusters_used(),
        groups_used: placement.groups_used(),
        rows_per_group: next_row.to_vec(),
        cluster_files: cluster_streams.keys().map(|c| format!("cluster_{c:02}.cfg")).collect(),
        memory_files: memory.keys().map(|g| format!("group_{g}.mem")).collect(),
        timesteps: None,
        seed: None,
    };
    Ok(FabricImage {
        manifest,
        network: net.clone(),
        init: InitImage { cluster_streams, memory_streams: memory, multicast },
        baseline: BaselineImage { configs, synapses, inputs: input_synapses },
        quantized: q,
    })
}

fn parse_err(path: &Path, reason: impl Into<String>) -> CompileError {
    CompileError::Image { path: path.to_path_buf(), reason: reason.into() }
}

fn parse_lines<const N: usize>(path: &Path, text: &str) -> Result<Vec<[i64; N]>, CompileError> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != N {
            return Err(parse_err(path, format!("line {}: expected {N} fields", ln + 1)));
        }
        let mut rec = [0i64; N];
        for (slot, f) in rec.iter_mut().zip(&fields) {
            *slot = match f.strip_prefix("0x") {
                Some(h) => i64::from_str_radix(h, 16),
                None => f.parse(),
            }
            .map_err(|_| parse_err(path, format!("line {}: bad number {f:?}", ln + 1)))?;
        }
        out.push(rec);
    }
    Ok(out)
}

impl FabricImage {
    pub fn compile(net: &NetworkDescription) -> Result<Self, CompileError> {
        let placement = place(&net.quantize()?)?;
        emit_image(net, &placement)
    }

    /// Physical slots of the output layer, in output order.
    pub fn outputs(&self) -> Vec<(ClusterId, NeuronId)> {
        self.manifest.placement.outputs()
    }

    pub fn routes_text(&self) -> String {
        let mut s = String::new();
        for (src, mask) in self.init.multicast.iter() {
            writeln!(s, "{src} {mask:#010x}").unwrap();
        }
        s
    }

    pub fn adjacency_text(&self) -> String {
        let mut s = String::new();
        for &(src, dst, w) in &self.baseline.synapses {
            writeln!(s, "{src} {dst} {}", w.raw()).unwrap();
        }
        s
    }

    pub fn inputs_text(&self) -> String {
        let mut s = String::new();
        for (i, list) in self.baseline.inputs.iter().enumerate() {
            for &(dst, w) in list {
                writeln!(s, "{i} {dst} {}", w.raw()).unwrap();
            }
        }
        s
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), CompileError> {
        fs::create_dir_all(dir).map_err(|e| CompileError::io(dir, e))?;
        let write = |name: &str, bytes: &[u8]| {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(|e| CompileError::io(p, e))
        };
        let manifest = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        write("manifest.json", manifest.as_bytes())?;
        write("network.json", self.network.to_json().as_bytes())?;
        for (c, bytes) in &self.init.cluster_streams {
            write(&format!("cluster_{c:02}.cfg"), bytes)?;
        }
        for (g, bytes) in &self.init.memory_streams {
            write(&format!("group_{g}.mem"), bytes)?;
        }
        write("routes.txt", self.routes_text().as_bytes())?;
        write("adjacency.txt", self.adjacency_text().as_bytes())?;
        write("inputs.txt", self.inputs_text().as_bytes())?;
        Ok(())
    }

    /// Reads an image directory. Streams, routes and synapse lists come from
    /// their files; neuron parameters come from the bundled network.
    pub fn read_dir(dir: &Path) -> Result<Self, CompileError> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read(&p).map_err(|e| CompileError::io(p, e))
        };
        let text = |name: &str| -> Result<String, CompileError> {
            String::from_utf8(read(name)?).map_err(|_| parse_err(&dir.join(name), "not UTF-8"))
        };
        let manifest_path = dir.join("manifest.json");
        let manifest: ImageManifest =
            serde_json::from_str(&text("manifest.json")?).map_err(|e| parse_err(&manifest_path, e.to_string()))?;
        if manifest.schema != IMAGE_SCHEMA {
            return Err(parse_err(&manifest_path, format!("unknown schema {:?}", manifest.schema)));
        }
        let network = NetworkDescription::from_json(&text("network.json")?)?;
        if network.fingerprint() != manifest.network_sha256 {
            return Err(parse_err(&manifest_path, "network.json does not match the manifest fingerprint"));
        }
        let quantized = network.quantize()?;

        let mut cluster_streams = BTreeMap::new();
        for name in &manifest.cluster_files {
            let c = name
                .strip_prefix("cluster_")
                .and_then(|s| s.strip_suffix(".cfg"))
                .and_then(|s| s.parse::<u8>().ok())
                .filter(|c| (*c as usize) < PHYSICAL_CLUSTERS)
                .ok_or_else(|| parse_err(&manifest_path, format!("bad cluster file name {name:?}")))?;
            cluster_streams.insert(c, read(name)?);
        }
        let mut memory_streams = BTreeMap::new();
        for name in &manifest.memory_files {
            let g = name
                .strip_prefix("group_")
                .and_then(|s| s.strip_suffix(".mem"))
                .and_then(|s| s.parse::<u8>().ok())
                .filter(|g| (*g as usize) < CLUSTER_GROUPS)
                .ok_or_else(|| parse_err(&manifest_path, format!("bad memory file name {name:?}")))?;
            memory_streams.insert(g, read(name)?);
        }

        let routes_path = dir.join("routes.txt");
        let mut multicast = MulticastTable::new();
        for [src, mask] in parse_lines::<2>(&routes_path, &text("routes.txt")?)? {
            if !(0..crate::packet::SOURCE_IDS as i64).contains(&src) || !(0..=u32::MAX as i64).contains(&mask) {
                return Err(parse_err(&routes_path, format!("route {src} {mask:#x} out of range")));
            }
            multicast.set(src as usize, mask as u32);
        }

        let id = |path: &Path, v: i64| -> Result<u16, CompileError> {
            u16::try_from(v)
                .ok()
                .filter(|v| (*v as usize) < PHYSICAL_CLUSTERS * NEURONS_PER_CLUSTER)
                .ok_or_else(|| parse_err(path, format!("neuron id {v} out of range")))
        };
        let weight = |path: &Path, v: i64| -> Result<Potential, CompileError> {
            i32::try_from(v).map(Potential::from_raw).map_err(|_| parse_err(path, format!("weight {v} out of range")))
        };
        let adj_path = dir.join("adjacency.txt");
        let mut synapses = Vec::new();
        for [s, d, w] in parse_lines::<3>(&adj_path, &text("adjacency.txt")?)? {
            synapses.push((id(&adj_path, s)?, id(&adj_path, d)?, weight(&adj_path, w)?));
        }
        let in_path = dir.join("inputs.txt");
        let mut inputs = vec![Vec::new(); quantized.layers[0]];
        for [i, d, w] in parse_lines::<3>(&in_path, &text("inputs.txt")?)? {
            let list = usize::try_from(i)
                .ok()
                .and_then(|i| inputs.get_mut(i))
                .ok_or_else(|| parse_err(&in_path, format!("input {i} out of range")))?;
            list.push((id(&in_path, d)?, weight(&in_path, w)?));
        }
        let mut configs: Vec<(u16, NeuronConfig)> = manifest
            .placement
            .layers
            .iter()
            .enumerate()
            .flat_map(|(l, ids)| ids.iter().map(move |&id| (id, l)))
            .map(|(id, l)| (id, quantized.configs[l]))
            .collect();
        configs.sort_by_key(|&(id, _)| id);

        Ok(FabricImage {
            manifest,
            network,
            quantized,
            init: InitImage { cluster_streams, memory_streams, multicast },
            baseline: BaselineImage { configs, synapses, inputs },
        })
    }
}
