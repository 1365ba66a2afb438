//! Prints the layer stack and feature sizes of both feature networks.
use siampf::{ModelConfig, NetworkSpec};

fn show(spec: &NetworkSpec, inputs: &[usize]) {
    println!("{} ({} convs, stride {})", spec.name, spec.conv_count(), spec.total_stride());
    for (i, l) in spec.layers.iter().enumerate() {
        let tap = if spec.tap_index == Some(i) { "  <- tap" } else { "" };
        println!("  {:<8} {:?} k{} s{} -> {} ch{tap}", spec.layer_name(i), l.kind, l.kernel, l.stride, spec.channels_after(i));
    }
    for &n in inputs {
        match spec.side_trace(n) {
            Ok(sides) => println!("  {n} px: {sides:?}"),
            Err(at) => println!("  {n} px collapses at layer {at}"),
        }
    }
}

fn main() -> siampf::Result<()> {
    show(&NetworkSpec::vgg_backbone(), &[127, 255]);
    show(&NetworkSpec::alexnet_branch(), &[28, 60]);
    let desk = ModelConfig::desk_scale();
    let b = desk.backbone_spec()?;
    println!("desk scale: backbone {} -> {} channels, digest {}", b.name, b.output_channels(), &b.digest()[..12]);
    Ok(())
}
