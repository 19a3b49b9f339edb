use super::AppSpec;

const KEYS: [&str; 6] = [
    "Name",
    "Description",
    "Resources",
    "REST requests",
    "Additional details",
    "Deployment",
];

/// Canonical prompt text of an application: the preamble, then one block
/// per service in declaration order, separated by blank lines. Each block
/// lists the six template keys verbatim with their prose values.
pub fn render_prompt_text(spec: &AppSpec) -> String {
    let mut blocks: Vec<String> = Vec::with_capacity(spec.services.len() + 1);
    if !spec.preamble.trim().is_empty() {
        blocks.push(spec.preamble.trim().to_string());
    }
    for s in &spec.services {
        let values = [
            s.display_name.as_str(),
            s.description.as_str(),
            s.resources_text.as_str(),
            s.requests_text.as_str(),
            s.additional_details.as_str(),
            s.deployment.text.as_str(),
        ];
        let lines: Vec<String> = KEYS
            .iter()
            .zip(values)
            .enumerate()
            .map(|(i, (key, value))| {
                let open = if i == 0 { "{" } else { "" };
                let close = if i == KEYS.len() - 1 { "}" } else { "," };
                format!("{open}\"{key}\": \"{value}\"{close}")
            })
            .collect();
        blocks.push(lines.join("\n"));
    }
    blocks.join("\n\n")
}
